// Command-line front end: run, validate, list-builtins.

#include <CLI11.hpp>
#include <iostream>

#include "intertwine/intertwine.hpp"

namespace it = intertwine;

namespace {

void print_summary(const it::RunReport& report) {
  for (const auto& [name, task] : report.json["tasks"].items()) {
    std::cout << name << ": " << task.value("status", "?");
    if (task.contains("bound")) std::cout << "  bound = " << task["bound"].dump();
    if (task.contains("lambda1")) std::cout << "  lambda1 = " << task["lambda1"].dump();
    if (task.contains("error")) std::cout << "  error: " << task["error"].get<std::string>();
    if (task.contains("message") && task["status"] != "ok") std::cout << "  " << task["message"].get<std::string>();
    std::cout << "\n";
    if (task.contains("reports"))
      for (const auto& r : task["reports"])
        if (r["status"] != "pass") std::cout << "  " << r["status"].get<std::string>() << " " << r["name"].get<std::string>() << "\n";
  }
}

void list_builtins() {
  std::cout << "manifolds: euclidean circle flat-torus sphere2 hyperbolic-half-plane interval user-chart\n";
  std::cout << "twist families: identity scalar exp-poly diagonal shear user-matrix constant-matrix\n";
  std::cout << "modes: plain tilde\n";
  std::cout << "inequality kinds: poincare brascamp-lieb\n";
  std::cout << "tasks:";
  for (const auto& t : it::task_order()) std::cout << ' ' << t;
  std::cout << "\nfunctions: sin cos tan exp log sqrt tanh sinh cosh; constants pi e\n";
  std::cout << "test functions (1D):";
  for (const auto& f : it::builtin_test_functions(it::Manifold::euclidean(1))) std::cout << "\n  " << f;
  std::cout << "\ntest functions (2D):";
  for (const auto& f : it::builtin_test_functions(it::Manifold::euclidean(2))) std::cout << "\n  " << f;
  std::cout << "\nconfig keys:";
  for (const auto& f : it::detail::fields()) std::cout << "\n  " << f.key;
  std::cout << "\nworkers: INTERTWINE_WORKERS (default: hardware concurrency)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twisted intertwining toolkit: bounds, spectra, simulation and verification"};
  app.require_subcommand(1);

  std::string config_path, output;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "execute the tasks of a config file");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("-o,--output", output, "output directory (overrides the config)");
  run->add_flag("-q,--quiet", quiet, "no summary on stdout");

  auto* validate = app.add_subcommand("validate", "parse and compile a config file");
  validate->add_option("config", config_path, "config file")->required();

  app.add_subcommand("list-builtins", "list manifolds, twist families, tasks and test functions");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("list-builtins")) {
    list_builtins();
    return 0;
  }

  it::ParsedConfig parsed;
  it::RunSetup setup;
  try {
    parsed = it::load_config(config_path);
    setup = it::validate(parsed);
  } catch (const it::Error& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return it::kExitConfig;
  }
  if (app.got_subcommand("validate")) {
    std::cout << config_path << ": ok\n" << it::to_text(parsed.config);
    return 0;
  }

  const it::RunReport report = it::run(parsed.config, setup);
  const std::string dir = output.empty() ? parsed.config.output : output;
  try {
    it::write_outputs(report, dir);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return it::kExitTaskError;
  }
  if (!quiet) {
    print_summary(report);
    std::cout << "report: " << dir << "/report.json  exit " << report.exit_code() << "\n";
  }
  return report.exit_code();
}
