// collig: command-line harness over the verification suites and the measure
// export.  Exit codes: 0 suite passed / export written, 1 suite failed or
// internal error, 2 usage or configuration error.
#include "CLI11.hpp"
#include "json.hpp"

#include "collig/rx_measure.hpp"
#include "collig/suite.hpp"
#include "collig/types.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using collig::real;

collig::SuiteConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw collig::InvalidConfig("cannot open config file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw collig::InvalidConfig("config file '" + path + "' is not valid JSON: " +
                                std::string(e.what()));
  }
  if (!doc.is_object())
    throw collig::InvalidConfig("config file '" + path + "' must hold a JSON object");
  collig::SuiteConfig cfg;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "n") {
        cfg.n = value.get<int>();
      } else if (key == "m") {
        cfg.m = value.get<int>();
      } else if (key == "decay") {
        cfg.decay = value.get<real>();
      } else if (key == "lambda_grid") {
        if (!value.is_array())
          throw collig::InvalidConfig("lambda_grid must be an array of [re, im] pairs");
        for (const auto& entry : value) {
          if (!entry.is_array() || entry.size() != 2)
            throw collig::InvalidConfig("lambda_grid must be an array of [re, im] pairs");
          cfg.lambda_grid.emplace_back(entry[0].get<real>(), entry[1].get<real>());
        }
      } else if (key == "quad_order") {
        cfg.quad_order = value.get<int>();
      } else if (key == "tol") {
        cfg.tol = value.get<real>();
      } else if (key == "trials") {
        cfg.trials = value.get<int>();
      } else if (key == "output_dir") {
        cfg.output_dir = value.get<std::string>();
      } else {
        throw collig::InvalidConfig("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw collig::InvalidConfig("config file '" + path + "': " + std::string(e.what()));
  }
  return cfg;
}

std::vector<real> parse_reals(const std::string& text) {
  std::vector<real> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string piece =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(piece, &used));
      if (used != piece.size()) throw std::invalid_argument(piece);
    } catch (const std::exception&) {
      throw collig::InvalidConfig("'" + piece + "' is not a real number");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"verification harness for the colligation kernel library"};
  app.require_subcommand(1);

  // ---- verify ------------------------------------------------------------
  auto* verify =
      app.add_subcommand("verify", "run a verification suite; writes report.json + checks.csv");
  std::string suite_name;
  verify->add_option("suite", suite_name,
                     "mellin | semigroup | markov | canonical | rn | truncation | norm | all")
      ->required()
      ->check(CLI::IsMember(
          {"mellin", "semigroup", "markov", "canonical", "rn", "truncation", "norm", "all"}));
  std::string config_path;
  auto* opt_config = verify->add_option("--config", config_path, "JSON config file");
  std::uint64_t seed = 0;
  auto* opt_seed = verify->add_option("--seed", seed, "base RNG seed");
  int n = 0;
  auto* opt_n = verify->add_option("--n", n, "colligation rank");
  int m = 0;
  auto* opt_m = verify->add_option("--m", m, "colligation auxiliary size");
  int quad_order = 0;
  auto* opt_quad = verify->add_option("--quad-order", quad_order, "Gauss-Hermite order");
  real tol = 0.0;
  auto* opt_tol = verify->add_option("--tol", tol, "transform tolerance");
  int trials = 0;
  auto* opt_trials = verify->add_option("--trials", trials, "seeded trials per batch");
  std::string out_dir;
  auto* opt_out = verify->add_option("--out", out_dir, "report output directory");

  // ---- export-measure ----------------------------------------------------
  auto* exp = app.add_subcommand("export-measure",
                                 "write one measure as .json (measure document) or .csv");
  // free the short -h so the xi diagonal parameter can use the natural --h
  exp->set_help_flag("--help", "print this help message and exit");
  std::string kind;
  exp->add_option("--kind", kind, "phi | xi | fiber")
      ->required()
      ->check(CLI::IsMember({"phi", "xi", "fiber"}));
  real phi_b = 2.0;
  exp->add_option("--b", phi_b, "phi: lattice parameter b (default 2)");
  real phi_m = 0.3;
  exp->add_option("--big-m", phi_m, "phi: exponent parameter M (default 0.3)");
  real xi_h = 1.0;
  exp->add_option("--h", xi_h, "xi: diagonal invariant h (default 1)");
  real xi_psi = 0.7;
  exp->add_option("--psi", xi_psi, "xi: coupling psi (default 0.7)");
  collig::FiberSpec fiber;
  exp->add_option("--seed", fiber.seed, "fiber: RNG seed for the colligation draw");
  exp->add_option("--n", fiber.n, "fiber: colligation rank (default 1)");
  exp->add_option("--m", fiber.m, "fiber: auxiliary size (default 3)");
  exp->add_option("--decay", fiber.decay, "fiber: generator envelope (default 0.5)");
  std::string fiber_x, fiber_u;
  exp->add_option("--x", fiber_x, "fiber: point x as comma-separated reals (default origin)");
  exp->add_option("--u", fiber_u, "fiber: point u as comma-separated reals (default origin)");
  exp->add_option("--tol", fiber.tol, "fiber: convolution tail tolerance (default 1e-6)");
  std::string out_file;
  exp->add_option("--out", out_file, "output file (.json or .csv)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (verify->parsed()) {
      collig::SuiteConfig cfg;
      if (opt_config->count() > 0) cfg = load_config_file(config_path);
      if (opt_seed->count() > 0) cfg.seed = seed;
      if (opt_n->count() > 0) cfg.n = n;
      if (opt_m->count() > 0) cfg.m = m;
      if (opt_quad->count() > 0) cfg.quad_order = quad_order;
      if (opt_tol->count() > 0) cfg.tol = tol;
      if (opt_trials->count() > 0) cfg.trials = trials;
      if (opt_out->count() > 0) cfg.output_dir = out_dir;

      const collig::Report report = collig::run_suite(suite_name, cfg);
      collig::write_report(report, cfg.output_dir);

      std::size_t failed = 0;
      for (const auto& rec : report.records)
        if (!rec.pass) ++failed;
      std::cout << "suite " << report.suite << ": " << report.records.size() << " checks, "
                << failed << " failed -> " << (report.overall_pass ? "PASS" : "FAIL") << "\n";
      for (const auto& rec : report.records)
        if (!rec.pass)
          std::cout << "  FAIL " << rec.name << " [" << rec.params << "] residual "
                    << rec.residual << " > " << rec.threshold << "\n";
      std::cout << "report: " << cfg.output_dir << "/report.json, " << cfg.output_dir
                << "/checks.csv\n";
      return report.overall_pass ? 0 : 1;
    }

    if (kind == "phi") {
      collig::export_measure(collig::PhiParams{phi_b, phi_m}, out_file);
    } else if (kind == "xi") {
      collig::export_measure(collig::XiParams{xi_h, xi_psi}, out_file);
    } else {
      fiber.x = parse_reals(fiber_x);
      fiber.u = parse_reals(fiber_u);
      collig::export_measure(fiber, out_file);
    }
    std::cout << "wrote " << out_file << "\n";
    return 0;
  } catch (const collig::InvalidConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
