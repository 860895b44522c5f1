#pragma once

#include "errors.hpp"
#include "expr.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "twist.hpp"
#include "pathsim.hpp"
#include "semigroup.hpp"
#include "spectral.hpp"
#include "verify.hpp"
#include "config.hpp"
#include "run.hpp"
