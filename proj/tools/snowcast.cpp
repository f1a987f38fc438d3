// snowcast: command-line driver for the discharge forecasting experiments.
//
//   snowcast synth   --out DIR [--days N] [--seed N]
//   snowcast prepare --config PATH
//   snowcast run     --config PATH [--model NAME] [--features M1|M2] [--seed N] [--out DIR]
//   snowcast report  --out DIR
//   snowcast scatter --out DIR --model NAME --features M1|M2 --fold N
//   snowcast bench   --config PATH [--repeats N]
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 runtime/training.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "snowcast/cli/experiment.hpp"

namespace {

using namespace snowcast;
namespace fs = std::filesystem;

struct Flags {
  std::string config, model, features, out;
  std::size_t fold = 0, days = 4017, repeats = 5;
  std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : data::split_csv_line(s)) {
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

cli::ExperimentConfig config_with_overrides(const Flags& f) {
  if (f.config.empty()) throw ParameterError("--config is required");
  cli::ExperimentConfig c = cli::load_config(f.config);
  if (!f.model.empty()) {
    c.models.clear();
    for (const auto& m : split_list(f.model)) c.models.push_back(search::parse_model(m));
  }
  if (!f.features.empty()) {
    c.feature_sets.clear();
    for (const auto& s : split_list(f.features)) c.feature_sets.push_back(data::parse_feature_set(s));
  }
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  return c;
}

fs::path results_dir(const Flags& f) {
  if (!f.out.empty()) return f.out;
  if (!f.config.empty()) return cli::load_config(f.config).out;
  throw ParameterError("give --out DIR or --config PATH");
}

int run(const std::string& cmd, const Flags& f) {
  if (cmd == "synth") {
    if (f.out.empty()) throw ParameterError("synth: --out is required");
    cli::cmd_synth(f.out, f.days, f.seed.value_or(42));
    std::cout << "wrote " << (fs::path(f.out) / "daily.csv").string() << " and "
              << (fs::path(f.out) / "sca8.csv").string() << '\n';
  } else if (cmd == "prepare") {
    cli::cmd_prepare(config_with_overrides(f), std::cout);
  } else if (cmd == "run") {
    const auto c = config_with_overrides(f);
    cli::cmd_run(c, std::cout);
    std::cout << "results in " << c.out.string() << '\n';
  } else if (cmd == "report") {
    const fs::path out = results_dir(f);
    const auto sum = cli::cmd_report(out, out / "report");
    for (const auto& a : sum.averages) {
      std::cout << a.model << ' ' << a.feature_set << "  MAE " << report::format_value(a.mae) << "  RMSE "
                << report::format_value(a.rmse) << "  R2 " << report::format_value(a.r2) << "  KGE "
                << report::format_value(a.kge) << "  NSE " << report::format_value(a.nse) << '\n';
    }
    std::cout << "wrote " << (out / "report").string() << '\n';
  } else if (cmd == "scatter") {
    if (f.model.empty() || f.features.empty() || f.fold == 0) {
      throw ParameterError("scatter: --model, --features and --fold are required");
    }
    const fs::path out = results_dir(f);
    const std::string model = search::to_string(search::parse_model(f.model));
    const std::string fsn = data::to_string(data::parse_feature_set(f.features));
    const fs::path dest = out / "scatter" / (model + "_" + fsn + "_fold" + std::to_string(f.fold) + ".csv");
    const auto p = cli::cmd_scatter(out, f.model, f.features, f.fold, dest);
    std::cout << "wrote " << p.size() << " pairs to " << dest.string() << '\n';
  } else if (cmd == "bench") {
    cli::cmd_bench(config_with_overrides(f), f.repeats, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"snowcast: snowmelt discharge forecasting experiments"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  std::uint64_t seed = 0;
  app.add_option("--config", f.config, "experiment config (JSON)");
  app.add_option("--model", f.model, "model name(s), comma separated: SVR, LSTM, Transformer, TCN, Persistence, Constant");
  app.add_option("--features", f.features, "feature set(s): M1, M2");
  app.add_option("--fold", f.fold, "outer fold, counting from 1");
  auto* seed_opt = app.add_option("--seed", seed, "seed override");
  app.add_option("--out", f.out, "output directory");
  for (const char* name : {"synth", "prepare", "run", "report", "scatter", "bench"}) app.add_subcommand(name);
  app.get_subcommand("synth")->description("write a synthetic daily series and SCA sidecar");
  app.get_subcommand("synth")->add_option("--days", f.days, "number of days")->capture_default_str();
  app.get_subcommand("prepare")->description("spline SCA, merge, and summarise the windowed shapes");
  app.get_subcommand("run")->description("nested cross-validation for every configured model and feature set");
  app.get_subcommand("report")->description("rebuild the result tables from saved predictions");
  app.get_subcommand("scatter")->description("observed vs predicted pairs of one outer test fold");
  app.get_subcommand("bench")->description("time inference of the saved fold models");
  app.get_subcommand("bench")->add_option("--repeats", f.repeats, "timed passes per fold")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (*seed_opt) f.seed = seed;

  try {
    return run(app.get_subcommands().front()->get_name(), f);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "lookup error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
