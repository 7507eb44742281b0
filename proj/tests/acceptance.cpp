#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "cropcast/cropcast.hpp"
#include "oracles.hpp"

using namespace cropcast;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string data(const char* f) { return std::string(CROPCAST_DATA_DIR) + "/" + f; }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome crop_selection() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sel = select_all_countries(read_commodity_table(data("appendix_balances.csv")));
  const auto region_of = read_region_table(data("appendix_regions.csv"));
  struct Want {
    const char* region;
    const char* crop;
    std::size_t count;
  };
  const Want wants[] = {{"Western Africa", "Rice and products", 9},   {"Western Africa", "Cassava and products", 8},
                        {"Western Africa", "Maize and products", 7},  {"Eastern Africa", "Maize and products", 8},
                        {"Eastern Africa", "Cassava and products", 8}, {"Eastern Africa", "Sugar cane", 9},
                        {"Southern Africa", "Maize and products", 3}, {"Northern Africa", "Wheat and products", 4}};
  Outcome o{true, ""};
  for (const auto& w : wants) {
    std::size_t got = 0;
    for (const auto& t : tally_region(sel, region_of, w.region))
      if (t.crop == w.crop) got = t.count;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + w.crop + "@" + w.region + "=" + std::to_string(got);
    o.pass = o.pass && got == w.count;
  }
  const double s = seconds_since(t0);
  o.pass = o.pass && s < 1.0;
  o.detail += fmt(" (%.3f s)", s);
  return o;
}

Outcome rates() {
  const auto t0 = std::chrono::steady_clock::now();
  const double published[] = {-12.15, -4.92, 4.21, -1.55, -9.68, -18.56, 28.36};
  const auto rep = read_report(data("production_summary.csv"));
  Outcome o{rep.rows.size() == 7, ""};
  for (std::size_t i = 0; i < rep.rows.size() && i < 7; ++i) {
    const double r = rate_of_change(rep.rows[i].baseline_total_t, rep.rows[i].predicted_total_t);
    o.pass = o.pass && std::abs(r - published[i]) <= 0.01;
    o.detail += fmt(i ? ", %.4f" : "%.4f", r);
  }
  const double s = seconds_since(t0);
  o.pass = o.pass && s < 1.0;
  o.detail += fmt(" (%.3f s)", s);
  return o;
}

Outcome shares() {
  const auto t0 = std::chrono::steady_clock::now();
  const double total = 47209110;
  const auto sh = share_of_total({{"Democratic Republic of the Congo", 0.666 * total},
                                  {"Angola", 0.179 * total},
                                  {"Cameroon", 0.102 * total},
                                  {"Others", 0.053 * total}});
  const double drc = sh.at("Democratic Republic of the Congo"), ago = sh.at("Angola"), cmr = sh.at("Cameroon");
  Outcome o{std::abs(drc - 66.6) <= 0.05 && std::abs(ago - 17.9) <= 0.05 && std::abs(cmr - 10.2) <= 0.05, ""};
  o.detail = fmt("DRC %.3f", drc) + fmt(", Angola %.3f", ago) + fmt(", Cameroon %.3f", cmr);
  const double s = seconds_since(t0);
  o.pass = o.pass && s < 1.0;
  o.detail += fmt(" (%.3f s)", s);
  return o;
}

Outcome gradients() {
  Rng rng(2024);
  double worst = 0;
  for (int net = 0; net < 20; ++net) {
    const std::size_t d = 1 + rng.index(5);
    std::vector<std::size_t> sizes = {d};
    const std::size_t depth = 1 + rng.index(2);
    for (std::size_t l = 0; l < depth; ++l) sizes.push_back(1 + rng.index(8));
    sizes.push_back(1);
    MlpModel m = init_mlp(sizes, Activation::tanh, static_cast<std::uint64_t>(net));
    auto p = flatten_parameters(m);
    for (auto& v : p) v += rng.uniform(-0.3, 0.3);
    assign_parameters(m, p);
    const std::size_t n = 2 + rng.index(10);
    Matrix X(n, d);
    std::vector<double> y(n);
    for (auto& v : X.data) v = rng.uniform(-2, 2);
    for (auto& v : y) v = rng.uniform(-2, 2);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::vector<double> grad, scratch;
    loss_and_gradient(m, X, y, rows, grad);
    const double h = 1e-6;
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto q = p;
      q[k] = p[k] + h;
      assign_parameters(m, q);
      const double up = loss_and_gradient(m, X, y, rows, scratch);
      q[k] = p[k] - h;
      assign_parameters(m, q);
      const double down = loss_and_gradient(m, X, y, rows, scratch);
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[k]) / std::max(std::abs(fd) + std::abs(grad[k]), 1e-6));
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over 20 networks", worst)};
}

Outcome linear_recovery() {
  Rng rng(7);
  const std::size_t n = 200;
  FeatureDataset ds;
  ds.feature_names = {"x1", "x2"};
  ds.X = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    ds.X(i, 0) = rng.uniform(-3, 3);
    ds.X(i, 1) = rng.uniform(0, 5);
    ds.y.push_back(2 * ds.X(i, 0) - 3 * ds.X(i, 1) + 1);
    ds.pixel_index.push_back({0, i});
  }
  MlpHyper hp;
  hp.hidden = {};
  hp.learning_rate = 0.05;
  hp.batch_size = n;
  hp.max_epochs = 3000;
  hp.patience = 3000;
  const auto m = train_mlp(ds, {}, hp, 1);
  const auto beta = oracles::normal_equations(ds.X, ds.y);
  const std::vector<double> zero = {0, 0}, e1 = {1, 0}, e2 = {0, 1};
  const double b0 = forward_raw(m, zero);
  const double got[] = {b0, forward_raw(m, e1) - b0, forward_raw(m, e2) - b0};
  double worst = 0;
  for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(got[k] - beta[static_cast<std::size_t>(k)]));
  return {worst <= 1e-3, fmt("intercept %.6f", got[0]) + fmt(", w1 %.6f", got[1]) + fmt(", w2 %.6f", got[2]) +
                             fmt(", max deviation %.2e", worst)};
}

Outcome forest_oracle() {
  Rng rng(31);
  int exact = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.index(30), d = 1 + rng.index(3);
    Matrix X(n, d);
    std::vector<double> y(n);
    for (auto& v : X.data) v = static_cast<double>(rng.index(7)) * 0.5;
    for (auto& v : y) v = static_cast<double>(rng.index(9)) - 4.0;
    ForestParams p;
    p.n_trees = 1;
    p.bootstrap = false;
    p.all_features = true;
    p.min_leaf = 1 + rng.index(3);
    p.max_depth = 1 + rng.index(8);
    const auto f = fit_forest(X, y, p, static_cast<std::uint64_t>(trial));
    oracles::GreedyTree o{X, y, p.max_depth, p.min_leaf, {}};
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    o.grow(all, 0);
    bool same = f.trees[0].nodes == o.nodes;
    RegressionForest of;
    of.trees = {RegressionTree{o.nodes}};
    of.n_features = d;
    for (std::size_t i = 0; i < n && same; ++i) same = predict_forest(f, X.row(i)) == predict_forest(of, X.row(i));
    exact += same;
  }
  return {exact == 25, std::to_string(exact) + "/25 datasets identical"};
}

Outcome zonal() {
  Rng rng(5);
  int exact = 0;
  for (int scene = 0; scene < 50; ++scene) {
    const std::size_t rows = 1 + rng.index(40), cols = 1 + rng.index(40);
    GridRaster r(GridGeometry{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.01, 1), rows, cols}, 0.0);
    for (auto& v : r.values) v = rng.uniform() < 0.1 ? r.nodata : rng.uniform(0, 1e4);
    ZoneMap z{r.geo, std::vector<int>(r.values.size())};
    for (auto& id : z.zone_ids) id = static_cast<int>(rng.index(6));
    exact += zonal_sum(r, z) == oracles::zonal_loop(r, z);
  }
  return {exact == 50, std::to_string(exact) + "/50 scenes identical"};
}

Outcome end_to_end() {
  const fs::path root = fs::temp_directory_path() / "cropcast_acceptance";
  fs::remove_all(root);
  SynthConfig s;
  s.noise_sigma = 0.1;
  std::string manifests[2];
  double r2 = -INFINITY, slowest = 0;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    const auto t0 = std::chrono::steady_clock::now();
    write_synthetic_pipeline(s, dir);
    const auto r = run_pipeline(dir / "pipeline.toml");
    slowest = std::max(slowest, seconds_since(t0));
    if (r.code != ExitCode::ok) return {false, r.stage + ": " + r.message};
    manifests[run] = slurp(dir / "out" / kManifestName);
    r2 = nlohmann::json::parse(slurp(dir / "out" / "model.json")).at("metrics").at("oos_r2").get<double>();
  }
  fs::remove_all(root);
  const bool same = !manifests[0].empty() && manifests[0] == manifests[1];
  return {r2 >= 0.9 && slowest < 300 && same,
          fmt("held-out R2 %.4f", r2) + fmt(", slowest run %.1f s", slowest) +
              (same ? ", manifests identical" : ", manifests differ")};
}

Outcome onset() {
  Rng rng(99);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double lo = rng.uniform(0.05, 0.3), amp = rng.uniform(0.02, 0.6);
    const double up = rng.uniform(60, 200), down = up + rng.uniform(60, 150);
    const double k1 = rng.uniform(0.03, 0.2), k2 = rng.uniform(0.03, 0.2);
    std::vector<double> v;
    std::vector<int> d;
    for (int day = 1; day <= 365; day += 16) {
      d.push_back(day);
      v.push_back(lo + amp * (1 / (1 + std::exp(-k1 * (day - up))) - 1 / (1 + std::exp(-k2 * (day - down)))) +
                  rng.uniform(-0.005, 0.005));
    }
    exact += detect_greenness_onset(v, d) == oracles::onset_scan(v, d);
  }
  int constant_none = 0;
  for (double c : {0.0, 0.2, 0.55, 0.9}) {
    const std::vector<double> v(23, c);
    std::vector<int> d;
    for (int k = 0; k < 23; ++k) d.push_back(1 + 16 * k);
    constant_none += !detect_greenness_onset(v, d).has_value();
  }
  return {exact == 100 && constant_none == 4,
          std::to_string(exact) + "/100 series match the scan, " + std::to_string(constant_none) + "/4 constant series without onset"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"1 crop-selection tallies", crop_selection},
      {"2 rate-of-change arithmetic", rates},
      {"3 production shares", shares},
      {"4a MLP gradient check", gradients},
      {"4b linear recovery", linear_recovery},
      {"4c single-tree greedy oracle", forest_oracle},
      {"4d zonal sums", zonal},
      {"5 end-to-end synthetic run", end_to_end},
      {"6 greenness onset", onset},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
