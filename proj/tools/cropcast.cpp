#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "cropcast/cropcast.hpp"

namespace fs = std::filesystem;
using namespace cropcast;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
};

PipelineConfig load(const Globals& g) {
  if (g.config.empty()) throw Error(Errc::InvalidConfig, "--config is required");
  PipelineConfig c = load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) {
    c.threads = *g.threads;
    c.forest.threads = *g.threads;
  }
  return c;
}

std::string require_out(const Globals& g) {
  if (g.out.empty()) throw Error(Errc::InvalidConfig, "--out is required");
  return g.out;
}

int fail(const std::string& stage, const std::string& msg, ExitCode code) {
  std::cerr << "cropcast: " << stage << ": " << msg << "\n";
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-level staple-crop production forecasting"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Pipeline TOML file");
  app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--out", g.out, "Output path or directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write a synthetic scene and its pipeline.toml");
  SynthConfig sc;
  synth->add_option("--sigma", sc.noise_sigma, "Production noise as a fraction of the signal sd");
  synth->add_option("--rows", sc.prod_rows, "Production grid rows");
  synth->add_option("--cols", sc.prod_cols, "Production grid columns");
  synth->add_option("--first-year", sc.first_year);
  synth->add_option("--last-year", sc.last_year);

  auto* select = app.add_subcommand("select-crops", "Regional staple-crop selection");
  std::string balances, regions;
  select->add_option("--balances", balances)->required();
  select->add_option("--regions", regions)->required();

  auto* mask = app.add_subcommand("mask", "Crop mask and masked baseline from the baseline production");

  auto* features = app.add_subcommand("features", "Training and prediction feature datasets");
  std::string predict_out;
  features->add_option("--predict-out", predict_out, "Prediction dataset (default: predict_dataset.csv beside --out)");

  auto* forecast = app.add_subcommand("forecast-features", "Complete the latest season of a stack directory");
  std::string history;
  int asof = 0;
  int season_end = 366;
  forecast->add_option("--history", history)->required();
  forecast->add_option("--asof", asof)->required()->check(CLI::Range(1, 366));
  forecast->add_option("--season-end", season_end, "Last day to forecast")->check(CLI::Range(1, 366));

  auto* train = app.add_subcommand("train", "Train the production model");
  std::string dataset, hyper, model_out;
  train->add_option("--dataset", dataset)->required();
  train->add_option("--hyper", hyper, "TOML with [model] and [split] (defaults to --config)");
  train->add_option("--model-out", model_out)->required();

  auto* predict = app.add_subcommand("predict", "Predict production from a dataset");
  std::string model_in, predict_dataset;
  predict->add_option("--model", model_in)->required();
  predict->add_option("--dataset", predict_dataset)->required();

  auto* report = app.add_subcommand("report", "Country and region totals, ratio map");
  std::string pred, baseline, zones, zone_names, crop = "crop";
  report->add_option("--pred", pred)->required();
  report->add_option("--baseline", baseline)->required();
  report->add_option("--zones", zones, "Zone raster header; names from the .csv beside it")->required();
  report->add_option("--zone-names", zone_names, "Zone names CSV (zone_id,country,region)");
  report->add_option("--crop", crop);

  auto* run = app.add_subcommand("run", "Full pipeline");
  auto* validate = app.add_subcommand("validate", "Check a configuration");

  CLI11_PARSE(app, argc, argv);

  std::string stage = "cli";
  try {
    if (synth->parsed()) {
      stage = "synth";
      if (g.seed) sc.seed = *g.seed;
      write_synthetic_pipeline(sc, require_out(g));
    } else if (select->parsed()) {
      stage = "select-crops";
      RegionalSelectionRule rule;
      if (!g.config.empty()) rule = load(g).selection;
      stage_select_crops(balances, regions, require_out(g), rule);
    } else if (mask->parsed()) {
      stage = "mask";
      PipelineConfig c = load(g);
      if (!g.out.empty()) c.paths.output_dir = g.out;
      fs::create_directories(c.paths.output_dir);
      stage_mask(c);
      stage_baseline(c);
    } else if (features->parsed()) {
      stage = "features";
      PipelineConfig c = load(g);
      const fs::path train_csv = g.out.empty() ? c.out("train_dataset.csv") : fs::path(g.out);
      if (!g.out.empty()) c.paths.output_dir = fs::absolute(train_csv).parent_path();
      const fs::path pred_csv =
          !predict_out.empty() ? fs::path(predict_out) : train_csv.parent_path() / "predict_dataset.csv";
      stage_prepare(c);
      stage_forecast(c);
      stage_features(c, train_csv, pred_csv);
    } else if (forecast->parsed()) {
      stage = "forecast-features";
      ForecastOptions opt;
      if (!g.config.empty()) {
        const PipelineConfig c = load(g);
        opt.forest = c.forest;
        opt.per_pixel = c.forecast_per_pixel;
        opt.seed = c.stage_seed("forecast");
      } else {
        opt.seed = derive_seed(g.seed.value_or(0), "forecast");
        if (g.threads) opt.forest.threads = *g.threads;
      }
      opt.season_end_day = season_end;
      forecast_stack_dir(history, asof, require_out(g), opt);
    } else if (train->parsed()) {
      stage = "train";
      Globals hg = g;
      if (!hyper.empty()) hg.config = hyper;
      const PipelineConfig c = load(hg);
      stage_train(c, dataset, model_out);
    } else if (predict->parsed()) {
      stage = "predict";
      const PipelineConfig c = load(g);
      stage_predict(c, model_in, predict_dataset, require_out(g));
    } else if (report->parsed()) {
      stage = "report";
      if (zone_names.empty()) zone_names = fs::path(zones).replace_extension(".csv").string();
      stage_report(pred, baseline, zones, zone_names, require_out(g), crop);
    } else if (run->parsed()) {
      PipelineConfig c;
      try {
        c = load(g);
      } catch (const Error& e) {
        return fail("config", e.what(), ExitCode::config);
      }
      if (!g.out.empty()) c.paths.output_dir = g.out;
      const RunResult r = run_pipeline(c);
      if (r.code != ExitCode::ok) return fail(r.stage, r.message, r.code);
      std::cout << "wrote " << (c.paths.output_dir / kManifestName).string() << "\n";
    } else if (validate->parsed()) {
      stage = "validate";
      if (g.config.empty()) return fail(stage, "--config is required", ExitCode::config);
      const auto diags = validate_config(fs::path(g.config));
      for (const auto& d : diags) std::cout << d << "\n";
      return diags.empty() ? 0 : static_cast<int>(ExitCode::config);
    }
  } catch (const Error& e) {
    return fail(stage, e.what(), exit_code_for(e));
  } catch (const fs::filesystem_error& e) {
    return fail(stage, e.what(), ExitCode::data);
  }
  return 0;
}
