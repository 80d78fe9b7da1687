#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fragility/cli_io.hpp"
#include "fragility/csv.hpp"
#include "fragility/errors.hpp"

using namespace fragility;
namespace fs = std::filesystem;

namespace {

const fs::path fixtures = FRAGILITY_FIXTURE_DIR;
const fs::path configs = FRAGILITY_CONFIG_DIR;
const std::string cli = FRAGILITY_CLI;

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fragility_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  write_text_file(path, text);
  return path;
}

struct Run {
  int code = -1;
  std::string err;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  const auto err_file = dir / "stderr.txt";
  const auto cmd = cli + " " + args + " 2> " + err_file.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = fs::exists(err_file) ? read_text_file(err_file) : "";
  return r;
}

std::string prior_config(const fs::path& inventory, double width) {
  return nlohmann::json{{"schema_version", 1},
                        {"inventory", inventory.string()},
                        {"track",
                         {{"centerline_file", (fixtures / "centerline.csv").string()},
                          {"width_m", width}}}}
      .dump(2);
}

std::string update_config(const fs::path& field, const fs::path& obs, const fs::path& weights,
                          const std::string& mode) {
  return nlohmann::json{{"schema_version", 1},
                        {"field", field.string()},
                        {"observations", obs.string()},
                        {"weights", weights.string()},
                        {"mode", mode},
                        {"seed", 3}}
      .dump(2);
}

CommandOptions opts(const fs::path& config, const fs::path& out) {
  CommandOptions o;
  o.config = config;
  o.out = out;
  return o;
}

// Small, fast experiment config.
nlohmann::json small_experiment() {
  auto j = nlohmann::json::parse(read_text_file(configs / "default_scenario.json"));
  j["inventory"]["synthetic"]["count"] = 80;
  j["n_batches"] = 3;
  j["prior_widths_m"] = {0, 800};
  j["gp"]["fit_buildings"] = 30;
  j["gp"]["cold_restarts"] = 1;
  j["observer"]["calibration_size"] = 150;
  j["outputs"]["csv_snapshots"] = "final";
  return j;
}

}  // namespace

TEST_CASE("prior on the 3-building fixture gives 9 rows") {
  const auto dir = scratch("prior");
  const auto cfg = write_file(dir / "prior.json",
                              prior_config(fixtures / "inventory_small.csv", 800.0));
  const auto r = run_cli("prior --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
  REQUIRE(r.code == 0);
  const auto records = read_field_csv(dir / "out" / "field.csv");
  CHECK(records.size() == 9);
  CHECK(CsvTable::read(dir / "out" / "field.csv").rows() == 9);
  for (const auto& rec : records) {
    const auto mo = pn_moments(rec.stage1);
    CHECK(rec.reported.m == mo.m);
    CHECK(rec.reported.zeta == mo.zeta);
  }
  CHECK(fs::exists(dir / "out" / "field.geojson"));
  CHECK(fs::exists(dir / "out" / "manifest.json"));
}

TEST_CASE("missing archetype column exits 2 naming the column") {
  const auto dir = scratch("noarch");
  const auto cfg = write_file(dir / "prior.json",
                              prior_config(fixtures / "inventory_no_archetype.csv", 800.0));
  const auto r = run_cli("prior --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("archetype") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "field.csv"));
}

TEST_CASE("zero-width prior puts every cell at the clipped far-field value") {
  const auto dir = scratch("w0");
  const auto cfg = write_file(dir / "prior.json",
                              prior_config(fixtures / "inventory_small.csv", 0.0));
  cmd_prior(opts(cfg, dir / "out"));
  const auto records = read_field_csv(dir / "out" / "field.csv");
  REQUIRE(records.size() == 9);
  for (const auto& rec : records) {
    CHECK(rec.stage1.mu == doctest::Approx(-2.9 - 0.05 * static_cast<double>(rec.state)));
    CHECK(rec.reported.m == doctest::Approx(pn_moments(rec.stage1).m).epsilon(1e-15));
    CHECK(rec.reported.m < 0.3);
  }
}

TEST_CASE("update with no observations reproduces the input field") {
  const auto dir = scratch("identity");
  cmd_prior(opts(write_file(dir / "prior.json",
                            prior_config(fixtures / "inventory_small.csv", 800.0)),
                 dir / "prior"));
  const auto obs = write_file(dir / "obs.csv", "building_id,state,y,source\n");
  const auto w = write_file(dir / "w.csv", "source,state,weight\n");
  cmd_update(opts(write_file(dir / "update.json",
                             update_config(dir / "prior" / "field.csv", obs, w, "local-only")),
                  dir / "updated"));
  CHECK(read_text_file(dir / "updated" / "field.csv") ==
        read_text_file(dir / "prior" / "field.csv"));
}

TEST_CASE("one unit-weight positive observation on PN(0,1) gives m = 2/3") {
  const auto dir = scratch("one");
  const auto field = write_file(dir / "field.csv",
                                "building_id,state,m,var_p,mu,sigma2,x_m,y_m,archetype\n"
                                "a,moderate,0.5,0.25,0,1,0,0,1\n"
                                "a,extensive,0.5,0.25,0,1,0,0,1\n"
                                "a,complete,0.5,0.25,0,1,0,0,1\n");
  const auto obs = write_file(dir / "obs.csv", "building_id,state,y,source\na,moderate,1,s\n");
  const auto w = write_file(dir / "w.csv", "source,state,weight\ns,moderate,1\n");
  cmd_update(opts(write_file(dir / "u.json", update_config(field, obs, w, "local-only")),
                  dir / "out"));
  const auto records = read_field_csv(dir / "out" / "field.csv");
  REQUIRE(records.size() == 3);
  CHECK(std::abs(records[0].reported.m - 2.0 / 3.0) < 1e-6);
  CHECK(records[1].stage1.mu == 0.0);
  CHECK(records[1].stage1.sigma2 == 1.0);
}

TEST_CASE("gp update round-trips the prior output and reports positive variance") {
  const auto dir = scratch("gp");
  cmd_prior(opts(write_file(dir / "prior.json",
                            prior_config(fixtures / "inventory_small.csv", 800.0)),
                 dir / "prior"));
  const auto obs = write_file(dir / "obs.csv",
                              "building_id,state,y,source\nb1,moderate,0.9,cnn\nb2,complete,0.1,cnn\n");
  const auto w = write_file(dir / "w.csv",
                            "source,state,weight\ncnn,moderate,6.68\ncnn,complete,4.43\n");
  cmd_update(opts(write_file(dir / "u.json",
                             update_config(dir / "prior" / "field.csv", obs, w, "gp-enabled")),
                  dir / "out"));
  const auto records = read_field_csv(dir / "out" / "field.csv");
  REQUIRE(records.size() == 9);
  for (const auto& rec : records) {
    CHECK(rec.reported.zeta > 0.0);
    REQUIRE(rec.gp_var.has_value());
    CHECK(*rec.gp_var > 0.0);
  }
  CHECK(CsvTable::read(dir / "out" / "trajectory.csv").rows() == 1);
}

TEST_CASE("update rejects unknown building ids and missing weights") {
  const auto dir = scratch("mismatch");
  cmd_prior(opts(write_file(dir / "prior.json",
                            prior_config(fixtures / "inventory_small.csv", 800.0)),
                 dir / "prior"));
  std::string rows = "building_id,state,y,source\n";
  for (int k = 0; k < 12; ++k) rows += "ghost" + std::to_string(k) + ",moderate,1,s\n";
  const auto obs = write_file(dir / "obs.csv", rows);
  const auto w = write_file(dir / "w.csv", "source,state,weight\ns,moderate,1\n");
  const auto cfg = write_file(dir / "u.json",
                              update_config(dir / "prior" / "field.csv", obs, w, "local-only"));
  const auto r = run_cli("update --config " + cfg.string() + " --out " + (dir / "o").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("ghost9") != std::string::npos);
  CHECK(r.err.find("ghost10") == std::string::npos);
  CHECK(r.err.find("12 building id") != std::string::npos);

  const auto obs2 = write_file(dir / "obs2.csv", "building_id,state,y,source\nb1,complete,1,s\n");
  CHECK_THROWS_WITH_AS(
      cmd_update(opts(write_file(dir / "u2.json", update_config(dir / "prior" / "field.csv", obs2,
                                                                w, "local-only")),
                      dir / "o2")),
      doctest::Contains("s/complete"), InvalidInput);
}

TEST_CASE("field files round-trip exactly") {
  const auto dir = scratch("roundtrip");
  std::vector<Building> b{{"x", {1.0 / 3.0, -2e-7}, 4}, {"y", {1e6, M_PI}, 19}};
  std::vector<PnMarginal> s1;
  std::vector<PnMoments> rep;
  Rng rng(5);
  for (int k = 0; k < 6; ++k) {
    s1.push_back({rng.normal(), rng.uniform()});
    rep.push_back(pn_moments(s1.back()));
  }
  GpPosterior gp;
  gp.mean = Eigen::VectorXd::Random(6);
  gp.variance = Eigen::VectorXd::Random(6).cwiseAbs();
  const auto records = make_field_records(b, s1, rep, &gp);
  write_file(dir / "f.csv", field_csv(records));
  const auto back = read_field_csv(dir / "f.csv");
  REQUIRE(back.size() == records.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].building_id == records[k].building_id);
    CHECK(back[k].state == records[k].state);
    CHECK(back[k].reported.m == records[k].reported.m);
    CHECK(back[k].reported.zeta == records[k].reported.zeta);
    CHECK(back[k].stage1.mu == records[k].stage1.mu);
    CHECK(back[k].stage1.sigma2 == records[k].stage1.sigma2);
    CHECK(back[k].position.x == records[k].position.x);
    CHECK(back[k].position.y == records[k].position.y);
    CHECK(*back[k].gp_mean == *records[k].gp_mean);
    CHECK(*back[k].gp_var == *records[k].gp_var);
  }
  CHECK(field_csv(back) == field_csv(records));
}

TEST_CASE("field reader rejects incomplete buildings") {
  const auto dir = scratch("incomplete");
  write_file(dir / "f.csv",
             "building_id,state,m,var_p,mu,sigma2,x_m,y_m,archetype\n"
             "a,moderate,0.5,0.25,0,1,0,0,1\n"
             "a,extensive,0.5,0.25,0,1,0,0,1\n");
  CHECK_THROWS_WITH_AS(read_field_csv(dir / "f.csv"), doctest::Contains("complete"), InvalidInput);
  write_file(dir / "g.csv",
             "building_id,state,m,var_p,mu,sigma2,x_m,y_m,archetype\n"
             "a,moderate,0.5,0.25,0,1,0,0,1\n"
             "a,moderate,0.5,0.25,0,1,0,0,1\n");
  CHECK_THROWS_WITH_AS(read_field_csv(dir / "g.csv"), doctest::Contains(":3:"), InvalidInput);
}

TEST_CASE("geojson is a FeatureCollection of planar points") {
  const std::vector<Building> b{{"q", {10.0, -20.0}, 2}};
  const std::vector<PnMarginal> s1(3, PnMarginal{0.0, 1.0});
  const std::vector<PnMoments> rep(3, pn_moments({0.0, 1.0}));
  const auto doc = nlohmann::json::parse(field_geojson(make_field_records(b, s1, rep)));
  CHECK(doc["type"] == "FeatureCollection");
  CHECK(doc["coordinate_system"]["type"] == "planar");
  REQUIRE(doc["features"].size() == 3);
  for (const auto& f : doc["features"]) {
    CHECK(f["type"] == "Feature");
    CHECK(f["geometry"]["type"] == "Point");
    CHECK(f["geometry"]["coordinates"] == nlohmann::json::array({10.0, -20.0}));
    CHECK(f["properties"]["planar_coordinates"] == true);
    CHECK(f["properties"]["building_id"] == "q");
  }
}

TEST_CASE("config schema errors name the field path") {
  const auto dir = scratch("schema");
  auto check = [&](nlohmann::json j, const std::string& path) {
    const auto cfg = write_file(dir / "c.json", j.dump());
    const auto r = run_cli("experiment --config " + cfg.string() + " --dry-run", dir);
    CHECK(r.code == 2);
    CHECK_MESSAGE(r.err.find(path) != std::string::npos, r.err);
  };
  const auto base = small_experiment();
  auto j = base;
  j["observer"]["bogus"] = 1;
  check(j, "$.observer.bogus");
  j = base;
  j["n_batches"] = "eight";
  check(j, "$.n_batches");
  j = base;
  j.erase("schema_version");
  check(j, "$.schema_version");
  j = base;
  j["schema_version"] = 2;
  check(j, "$.schema_version");
  j = base;
  j["modes"] = {"gp"};
  check(j, "$.modes[0]");
  j = base;
  j["gp"]["init"]["tau"] = -1;
  check(j, "$.gp.init");
  j = base;
  j["true_track"]["centerline"] = {{0, 0}};
  check(j, "$.true_track");
  j = base;
  j["holdout_fraction"] = 1.5;
  check(j, "holdout_fraction");

  const auto bad = write_file(dir / "bad.json", "{ not json");
  CHECK(run_cli("experiment --config " + bad.string() + " --dry-run", dir).code == 2);
  CHECK(run_cli("experiment --out " + dir.string(), dir).code == 2);
  CHECK(run_cli("launch --config x", dir).code == 2);
}

TEST_CASE("experiment outputs: dry run, row count, determinism and seeds") {
  const auto dir = scratch("experiment");
  const auto cfg_json = small_experiment();
  const auto cfg = write_file(dir / "exp.json", cfg_json.dump(2));

  const auto dry = run_cli("experiment --config " + cfg.string() + " --out " +
                               (dir / "dry").string() + " --dry-run",
                           dir);
  CHECK(dry.code == 0);
  CHECK_FALSE(fs::exists(dir / "dry"));

  REQUIRE(run_cli("experiment --config " + cfg.string() + " --out " + (dir / "a").string(), dir)
              .code == 0);
  REQUIRE(run_cli("experiment --config " + cfg.string() + " --out " + (dir / "b").string(), dir)
              .code == 0);
  REQUIRE(run_cli("experiment --config " + cfg.string() + " --seed 99 --out " +
                      (dir / "c").string(),
                  dir)
              .code == 0);

  const std::size_t steps = cfg_json["n_batches"].get<std::size_t>() + 1;
  const std::size_t expected = (steps + 1) * cfg_json["modes"].size() * 2 * kNumStates *
                               cfg_json["prior_widths_m"].size() * cfg_json["strategies"].size();
  CHECK(CsvTable::read(dir / "a" / "metrics.csv").rows() == expected);

  const auto metrics_a = read_text_file(dir / "a" / "metrics.csv");
  CHECK(metrics_a == read_text_file(dir / "b" / "metrics.csv"));
  CHECK(sha256_hex(metrics_a) != sha256_hex(read_text_file(dir / "c" / "metrics.csv")));

  const auto manifest = nlohmann::json::parse(read_text_file(dir / "a" / "manifest.json"));
  CHECK(manifest["seed"] == cfg_json["seed"]);
  CHECK(nlohmann::json::parse(read_text_file(dir / "c" / "manifest.json"))["seed"] == 99);
  CHECK(manifest["config_sha256"] == sha256_hex(read_text_file(cfg)));
  bool saw_metrics = false;
  for (const auto& f : manifest["files"]) {
    const auto content = read_text_file(dir / "a" / f["path"].get<std::string>());
    CHECK(f["sha256"] == sha256_hex(content));
    CHECK(f["bytes"] == content.size());
    saw_metrics = saw_metrics || f["path"] == "metrics.csv";
  }
  CHECK(saw_metrics);
  // one final CSV and GeoJSON snapshot per run
  const std::size_t runs = cfg_json["modes"].size() * cfg_json["prior_widths_m"].size();
  std::size_t snapshots = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "snapshots")) {
    (void)e;
    ++snapshots;
  }
  CHECK(snapshots == 2 * runs);
}

TEST_CASE("shipped default scenario parses to the documented design") {
  const auto text = read_text_file(configs / "default_scenario.json");
  const auto c = parse_experiment_config(text, configs);
  const auto& s = c.scenario;
  CHECK(s.synthetic.count == 500);
  CHECK(s.prior_widths == std::vector<double>{0.0, 800.0, 3200.0});
  CHECK(s.n_batches == 8);
  CHECK(s.holdout_fraction == 0.2);
  CHECK(s.modes.size() == 2);
  CHECK(s.true_track.width_total == 1600.0);
  CommandOptions o;
  o.config = configs / "default_scenario.json";
  o.dry_run = true;
  CHECK_NOTHROW(cmd_experiment(o));
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
