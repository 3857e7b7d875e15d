#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gspdr/config.hpp"
#include "gspdr/env.hpp"
#include "gspdr/error.hpp"
#include "gspdr/harness.hpp"

namespace {

int exit_code_for(const gspdr::Error& e) {
  const std::string c = e.category();
  return (c == "usage" || c == "config" || c == "parse" || c == "validation") ? 2 : 1;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out,
              bool quiet) {
  gspdr::RunConfig cfg;
  if (!config_path.empty()) gspdr::load_config_file(cfg, config_path);
  for (const auto& o : overrides) gspdr::apply_override(cfg, o);
  cfg.out_dir = out;
  cfg.validate();
  const auto result = gspdr::train(cfg);
  if (!quiet) {
    for (const auto& s : result.seeds) {
      const auto& last = s.metrics.back();
      std::cout << "seed " << s.seed << ": final return " << last.episode_return << ", final storage "
                << last.final_storage << (last.satisfied ? " (satisfied)" : " (not satisfied)") << '\n';
    }
    std::cout << "wrote " << cfg.out_dir << '\n';
  }
  return 0;
}

int run_evaluate(const std::string& checkpoint, int episodes) {
  const auto s = gspdr::evaluate(checkpoint, episodes);
  std::cout << std::setprecision(10) << "episodes," << s.episodes << '\n'
            << "mean_return," << s.mean_return << '\n'
            << "satisfaction_rate," << s.satisfaction_rate << '\n'
            << "final_storage";
  for (double f : s.final_storage) std::cout << ',' << f;
  std::cout << '\n';
  return 0;
}

int run_compare(const std::vector<std::string>& dirs, const gspdr::CompareOptions& opt) {
  std::vector<gspdr::RunCurves> runs;
  for (const auto& d : dirs) runs.push_back(gspdr::load_run(d));
  gspdr::write_comparison(std::cout, gspdr::compare(runs, opt));
  return 0;
}

int run_gen_prices(std::uint64_t seed, int hours, const std::string& out, double base, double amplitude,
                   double noise) {
  if (hours < 1) throw gspdr::UsageError("--hours must be >= 1");
  gspdr::save_price_profile(out, gspdr::generate_price_profile(seed, hours, base, amplitude, noise, 1.0));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-space-planning DDPG for demand-response scheduling"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train agents for every configured seed");
  train->add_option("--config", config_path, "key = value or JSON config file");
  train->add_option("--set", overrides, "override, key=value (repeatable)")->take_all();
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_flag("--quiet", quiet, "no summary on stdout");

  std::string checkpoint;
  int eval_episodes = 0;
  auto* evaluate = app.add_subcommand("evaluate", "noise-free rollouts of a saved actor");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint.txt of one seed")->required();
  evaluate->add_option("--episodes", eval_episodes, "number of rollouts")->required();

  std::vector<std::string> dirs;
  gspdr::CompareOptions cmp;
  std::optional<double> threshold;
  auto* compare = app.add_subcommand("compare", "per-episode mean/std and steps-to-threshold across runs");
  compare->add_option("dirs", dirs, "run directories")->required();
  compare->add_option("--fraction", cmp.fraction, "threshold as fraction of the improvement range");
  compare->add_option("--smoothing", cmp.smoothing, "moving-average window in episodes");
  compare->add_option("--threshold", threshold, "absolute return threshold");

  std::string heat_dir;
  auto* heatmap = app.add_subcommand("export-heatmap", "write values_heatmap.csv from saved goal values");
  heatmap->add_option("dir", heat_dir, "run or seed directory")->required();

  std::uint64_t price_seed = 0;
  int hours = 0;
  std::string price_out;
  double base = 1.0, amplitude = 0.5, noise = 0.05;
  auto* prices = app.add_subcommand("gen-prices", "write a synthetic day-night price profile");
  prices->add_option("--seed", price_seed)->required();
  prices->add_option("--hours", hours)->required();
  prices->add_option("--out", price_out)->required();
  prices->add_option("--base", base);
  prices->add_option("--amplitude", amplitude);
  prices->add_option("--noise", noise);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return run_train(config_path, overrides, out_dir, quiet);
    if (*evaluate) return run_evaluate(checkpoint, eval_episodes);
    if (*compare) {
      cmp.absolute_threshold = threshold;
      return run_compare(dirs, cmp);
    }
    if (*heatmap) {
      for (const auto& f : gspdr::export_heatmap(heat_dir)) std::cout << "wrote " << f << '\n';
      return 0;
    }
    if (*prices) return run_gen_prices(price_seed, hours, price_out, base, amplitude, noise);
  } catch (const gspdr::Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
