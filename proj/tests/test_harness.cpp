#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "evalign/errors.hpp"
#include "evalign/harness.hpp"
#include "evalign/rng.hpp"

using namespace evalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("evalign_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

AlignmentNet identity_net() {
  AlignmentNet net;
  net.nu.raw_combiner = {1.0};
  net.head = AffineHead{0.0, 0.0};
  return net;
}

}  // namespace

TEST_CASE("config round-trips losslessly for every experiment") {
  for (const ExperimentKind kind : {ExperimentKind::kConvexToy,
                                    ExperimentKind::kSyntheticDownstream,
                                    ExperimentKind::kInventory}) {
    ExperimentConfig cfg = default_config(kind);
    cfg.seed = 77;
    cfg.chaining = GaussianChaining{0.5, 0.0, 1.0};
    cfg.train.early_stopping = 12;
    const nlohmann::json j1 = config_to_json(cfg);
    const ExperimentConfig back = config_from_json(j1);
    const nlohmann::json j2 = config_to_json(back);
    CHECK(j1.dump() == j2.dump());
  }
}

TEST_CASE("chaining json rejects unknown families and bad parameters") {
  CHECK_THROWS_AS(chaining_from_json(nlohmann::json{{"family", "nope"}}), ConfigError);
  CHECK_THROWS_AS(chaining_from_json(nlohmann::json{{"family", "interval"}, {"a", 2.0}, {"b", 1.0}}),
                  InvalidInput);
}

TEST_CASE("export grid of the identity transform has unit weight") {
  const AlignmentNet net = identity_net();
  const std::vector<io::GridRow> rows = export_chaining_grid(net, -2.0, 2.0, 101);
  REQUIRE(rows.size() == 101);
  for (const io::GridRow& r : rows) {
    CHECK(r.w == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.nu == doctest::Approx(r.z).epsilon(1e-9));
  }
}

TEST_CASE("export grid minimal case and validation") {
  const std::vector<io::GridRow> rows =
      export_chaining_grid(ChainingSpec{ThresholdChaining{0.0}}, -1.0, 1.0, 3);
  REQUIRE(rows.size() == 3);
  for (const io::GridRow& r : rows) {
    CHECK(std::isfinite(r.nu));
    CHECK(std::isfinite(r.w));
  }
  CHECK_THROWS_AS(export_chaining_grid(ChainingSpec{IdentityChaining{}}, 1.0, -1.0, 16),
                  InvalidInput);
  CHECK_THROWS_AS(export_chaining_grid(ChainingSpec{IdentityChaining{}}, -1.0, 1.0, 2),
                  InvalidInput);
}

TEST_CASE("learned transforms export nonnegative weights") {
  Rng rng(5);
  for (int it = 0; it < 10; ++it) {
    AlignmentNet net = make_alignment_net({}, rng.next_u64());
    std::vector<double> params = flatten_params(net);
    for (double& p : params) {
      p += 0.4 * rng.normal();
    }
    set_params(net, params);
    for (const io::GridRow& r : export_chaining_grid(net, -5.0, 5.0, 256)) {
      CHECK(r.w >= -1e-6);
    }
  }
}

TEST_CASE("alignment curve ranks and tau summaries") {
  const std::vector<double> s{1.0, 2.0, 3.0, 4.0};
  auto [rows, tau] = export_alignment_curve(s, s);
  CHECK(tau == doctest::Approx(1.0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].rank_x == static_cast<int>(i) + 1);
    CHECK(rows[i].rank_d == static_cast<int>(i) + 1);
  }
  const std::vector<double> rev{4.0, 3.0, 2.0, 1.0};
  auto [rrows, rtau] = export_alignment_curve(s, rev);
  CHECK(rtau == doctest::Approx(-1.0));
  CHECK_THROWS_AS(export_alignment_curve(s, std::vector<double>{1.0}), InvalidInput);
}

TEST_CASE("csv round-trips") {
  const fs::path dir = temp_dir("csv");

  std::vector<Ensemble> ens;
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    Ensemble e;
    e.instance_id = "inst" + std::to_string(i);
    e.observation = rng.uniform(-3.0, 3.0);
    for (int j = 0; j < 7; ++j) {
      e.samples.push_back(rng.uniform(-3.0, 3.0));
    }
    ens.push_back(std::move(e));
  }
  const std::string wide = (dir / "wide.csv").string();
  const std::string longf = (dir / "long.csv").string();
  io::write_ensembles_csv_wide(wide, ens);
  io::write_ensembles_csv_long(longf, ens);
  for (const std::string& path : {wide, longf}) {
    const std::vector<Ensemble> back = io::read_ensembles_csv(path);
    REQUIRE(back.size() == ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i) {
      CHECK(back[i].instance_id == ens[i].instance_id);
      CHECK(back[i].observation == ens[i].observation);
      CHECK(back[i].samples == ens[i].samples);
    }
  }

  const std::vector<io::ScoreRow> scores{{"a", 1.25, 2.0, NewsvendorParams{3.0, 1.0, 0.5}},
                                         {"b", -0.75, std::nullopt, std::nullopt}};
  const std::string spath = (dir / "scores.csv").string();
  io::write_scores_csv(spath, scores);
  const std::vector<io::ScoreRow> sback = io::read_scores_csv(spath);
  REQUIRE(sback.size() == 2);
  CHECK(sback[0].s_d == 1.25);
  CHECK(sback[0].action.has_value());
  CHECK(sback[0].params->price == 3.0);
  CHECK_FALSE(sback[1].action.has_value());

  const std::vector<NewsvendorParams> params{{10.0, 4.0, 1.0}, {8.5, 3.0, 0.0}};
  const std::string ppath = (dir / "params.csv").string();
  io::write_params_csv(ppath, params);
  const std::vector<NewsvendorParams> pback = io::read_params_csv(ppath);
  CHECK(pback[1].price == 8.5);

  const std::vector<MonthRecord> months{{0, 100.0, 9000.0}, {1, 120.5, 9100.25}};
  const std::string mpath = (dir / "demand.csv").string();
  io::write_demand_csv(mpath, months);
  CHECK(io::read_demand_csv(mpath)[1].demand == 120.5);

  const std::vector<XY> xy{{0.5, 1.0}, {-2.0, 4.25}};
  const std::string xpath = (dir / "xy.csv").string();
  io::write_xy_csv(xpath, xy);
  CHECK(io::read_xy_csv(xpath)[1].y == 4.25);

  CHECK_THROWS_AS(io::read_ensembles_csv((dir / "missing.csv").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("run experiment writes artifacts, is deterministic, and locks") {
  const fs::path dir = temp_dir("toyrun");
  ExperimentConfig cfg = default_config(ExperimentKind::kConvexToy);
  cfg.toy_instances = 48;
  cfg.toy_samples = 24;
  cfg.train.epochs = 40;
  cfg.seed = 11;
  cfg.out_dir = (dir / "run").string();

  const RunManifest manifest = run_experiment(cfg);
  for (const std::string& artifact : manifest.artifacts) {
    CHECK(fs::exists(fs::path(cfg.out_dir) / artifact));
  }
  CHECK(fs::exists(fs::path(cfg.out_dir) / "manifest.json"));
  CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / ".partial"));
  CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / ".lock"));
  const std::string metrics1 = io::read_text(cfg.out_dir + "/metrics.json");

  // identical rerun
  const RunManifest again = run_experiment(cfg);
  CHECK(io::read_text(cfg.out_dir + "/metrics.json") == metrics1);
  CHECK(again.metrics.dump() == manifest.metrics.dump());

  // the lock blocks concurrent runs into the same directory
  {
    std::ofstream lock(cfg.out_dir + "/.lock");
  }
  CHECK_THROWS_AS(run_experiment(cfg), IoError);
  fs::remove(cfg.out_dir + "/.lock");
  fs::remove_all(dir);
}

TEST_CASE("cli maps errors to documented exit codes") {
  const auto run_cli = [](std::vector<const char*> args) {
    args.insert(args.begin(), "evalign");
    return cli_main(static_cast<int>(args.size()), args.data());
  };
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"run", "--config", "/definitely/missing.json"}) == 2);
  CHECK(run_cli({"run", "--nonsense-flag"}) == 2);
  CHECK(run_cli({"gen-data", "--kind", "sinusoidal"}) == 2);  // missing --out
  CHECK(run_cli({"export-grid", "--chaining", "{\"family\":\"interval\",\"a\":2,\"b\":1}",
                 "--zmin", "-1", "--zmax", "1", "--out", "/tmp/evalign_bad_grid.csv"}) == 4);
}

TEST_CASE("cli pipeline runs end to end on files") {
  const fs::path dir = temp_dir("clipipe");
  const auto run_cli = [](std::vector<const char*> args) {
    args.insert(args.begin(), "evalign");
    return cli_main(static_cast<int>(args.size()), args.data());
  };
  const std::string data = (dir / "data.csv").string();
  const std::string model = (dir / "regressor.json").string();
  const std::string ensembles = (dir / "ens.csv").string();
  const std::string scores = (dir / "scores.csv").string();
  const std::string net = (dir / "net.json").string();
  const std::string metrics = (dir / "metrics.json").string();
  const std::string grid = (dir / "grid.csv").string();
  const std::string curve = (dir / "curve.csv").string();

  CHECK(run_cli({"gen-data", "--kind", "sinusoidal", "--n", "300", "--seed", "3", "--out",
                 data.c_str()}) == 0);
  CHECK(run_cli({"train-forecaster", "--data", data.c_str(), "--epochs", "25", "--out",
                 model.c_str()}) == 0);
  CHECK(run_cli({"forecast", "--model", model.c_str(), "--data", data.c_str(), "--m", "20",
                 "--seed", "4", "--out", ensembles.c_str()}) == 0);
  CHECK(run_cli({"synth-downstream", "--ensembles", ensembles.c_str(), "--chaining",
                 "{\"family\":\"threshold\",\"t\":0.5}", "--out", scores.c_str()}) == 0);
  CHECK(run_cli({"align-train", "--ensembles", ensembles.c_str(), "--scores", scores.c_str(),
                 "--epochs", "30", "--seed", "5", "--out", net.c_str()}) == 0);
  CHECK(run_cli({"align-eval", "--model", net.c_str(), "--ensembles", ensembles.c_str(),
                 "--scores", scores.c_str(), "--out", metrics.c_str()}) == 0);
  CHECK(run_cli({"export-grid", "--model", net.c_str(), "--zmin", "-7", "--zmax", "7", "--out",
                 grid.c_str()}) == 0);
  CHECK(run_cli({"export-curve", "--x-scores", scores.c_str(), "--d-scores", scores.c_str(),
                 "--out", curve.c_str()}) == 0);

  const nlohmann::json m = nlohmann::json::parse(io::read_text(metrics));
  CHECK(m.contains("mae"));
  CHECK(m.contains("tau_aligned"));
  CHECK(io::read_grid_csv(grid).size() == 512);
  fs::remove_all(dir);
}
