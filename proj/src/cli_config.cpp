#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "fragility/cli_io.hpp"
#include "fragility/errors.hpp"

namespace fragility {

namespace {

using nlohmann::json;

// Object view that records which keys were read, so leftovers can be
// reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, std::string_view message) {
    throw InvalidInput(fmt::format("{}: {}", path, message));
  }

  std::string at(std::string_view key) const { return fmt::format("{}.{}", path_, key); }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (!v) fail(at(key), "required field is missing");
    return *v;
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, at(key));
  }
  template <class T>
  void count(const std::string& key, T& out) {
    if (const json* v = find(key)) out = static_cast<T>(as_count(*v, at(key)));
  }
  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  std::optional<std::string> string(const std::string& key) {
    if (const json* v = find(key)) return as_string(*v, at(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) fail(at(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Re-throws a validation failure with the field path in front.
template <class F>
void validate_at(const std::string& path, F&& check) {
  try {
    check();
  } catch (const InvalidInput& e) {
    Fields::fail(path, e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

json parse_document(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw InvalidInput("$: config must be a JSON object");
  const auto it = doc.find("schema_version");
  if (it == doc.end()) throw InvalidInput("$.schema_version: required field is missing");
  if (!it->is_number_integer() || it->get<long long>() != kSchemaVersion) {
    throw InvalidInput(fmt::format("$.schema_version: unsupported version {} (expected {})",
                                   it->dump(), kSchemaVersion));
  }
  return doc;
}

TornadoTrack parse_track(const json& j, const std::string& path,
                         const std::filesystem::path& base) {
  Fields f(j, path);
  TornadoTrack t;
  const json* points = f.find("centerline");
  const auto file = f.string("centerline_file");
  if (points && file) Fields::fail(path, "give either centerline or centerline_file, not both");
  if (points) {
    if (!points->is_array()) Fields::fail(f.at("centerline"), "expected an array of [x, y]");
    t.centerline.clear();
    for (std::size_t k = 0; k < points->size(); ++k) {
      const auto& p = (*points)[k];
      const auto at = fmt::format("{}[{}]", f.at("centerline"), k);
      if (!p.is_array() || p.size() != 2) Fields::fail(at, "expected [x, y]");
      t.centerline.push_back({Fields::as_number(p[0], at), Fields::as_number(p[1], at)});
    }
  } else if (file) {
    const auto p = resolve(base, *file);
    t.centerline = read_centerline_csv(p);
  } else {
    Fields::fail(path, "centerline or centerline_file is required");
  }
  f.number("width_m", t.width_total);
  f.number("v_core_mps", t.v_core);
  f.number("v_edge_mps", t.v_edge);
  f.number("core_fraction", t.core_fraction);
  f.number("edge_fraction", t.edge_fraction);
  f.finish();
  validate_at(path, [&] { t.validate(); });
  return t;
}

PriorOptions parse_prior_options(const json* j, const std::string& path) {
  PriorOptions o;
  if (!j) return o;
  Fields f(*j, path);
  f.number("beta_hazard", o.beta_hazard);
  f.number("beta_capacity", o.beta_capacity);
  f.number("clip_bound", o.clip_bound);
  f.number("separation", o.separation);
  f.number("wind_floor_mps", o.wind_floor);
  f.finish();
  if (!(o.beta_hazard >= 0.0) || !(o.beta_capacity >= 0.0)) {
    Fields::fail(path, "epistemic dispersions must be >= 0");
  }
  if (!(o.clip_bound > 0.0) || !(o.separation >= 0.0) || !(o.wind_floor > 0.0)) {
    Fields::fail(path, "clip_bound and wind_floor_mps must be > 0 and separation >= 0");
  }
  return o;
}

CompositeKernelParams parse_kernel(const json* j, const std::string& path) {
  CompositeKernelParams p;
  if (!j) return p;
  Fields f(*j, path);
  f.number("sigma2_global", p.sigma2_global);
  f.number("ell1", p.ell1);
  f.number("ell2", p.ell2);
  f.number("rho_a", p.rho_a);
  f.number("alpha_local", p.alpha_local);
  f.number("tau", p.tau);
  f.number("jitter", p.jitter);
  f.finish();
  validate_at(path, [&] { p.validate(); });
  return p;
}

GpSettings parse_gp(const json* j, const std::string& path) {
  GpSettings g;
  if (!j) return g;
  Fields f(*j, path);
  g.init = parse_kernel(f.find("init"), f.at("init"));
  f.integer("cold_restarts", g.cold_restarts);
  f.integer("warm_restarts", g.warm_restarts);
  f.integer("max_iterations", g.max_iterations);
  f.number("tolerance", g.tolerance);
  f.count("fit_buildings", g.fit_buildings);
  f.count("exact_cap", g.exact_cap);
  f.count("max_inducing", g.max_inducing);
  f.boolean("enforce_ordinality", g.enforce_ordinality);
  f.finish();
  if (g.cold_restarts < 1 || g.warm_restarts < 1) Fields::fail(path, "restarts must be >= 1");
  if (g.max_iterations < 1) Fields::fail(f.at("max_iterations"), "must be >= 1");
  if (!(g.tolerance > 0.0)) Fields::fail(f.at("tolerance"), "must be > 0");
  if (g.exact_cap == 0) Fields::fail(f.at("exact_cap"), "must be >= 1");
  if (g.max_inducing == 0) Fields::fail(f.at("max_inducing"), "must be >= 1");
  return g;
}

ObserverConfig parse_observer(const json* j, const std::string& path) {
  ObserverConfig o;
  if (!j) return o;
  Fields f(*j, path);
  if (const auto kind = f.string("kind")) {
    validate_at(f.at("kind"), [&] { o.kind = parse_observer_kind(*kind); });
  }
  f.number("target_f1", o.target_f1);
  f.number("noise", o.noise);
  if (const json* t = f.find("temperature")) o.temperature = Fields::as_number(*t, f.at("temperature"));
  f.count("calibration_size", o.calibration_size);
  f.number("max_weight", o.max_weight);
  f.finish();
  return o;
}

SnapshotPolicy parse_snapshot_policy(const std::string& text, const std::string& path) {
  if (text == "none") return SnapshotPolicy::None;
  if (text == "final") return SnapshotPolicy::Final;
  if (text == "all") return SnapshotPolicy::All;
  Fields::fail(path, fmt::format("expected none, final or all (got '{}')", text));
}

std::uint64_t parse_seed(Fields& f) {
  std::uint64_t seed = 0;
  f.count("seed", seed);
  return seed;
}

}  // namespace

PriorCommandConfig parse_prior_config(const std::string& text,
                                      const std::filesystem::path& base_dir) {
  const auto doc = parse_document(text);
  Fields f(doc, "$");
  f.find("schema_version");
  PriorCommandConfig c;
  c.inventory = resolve(base_dir, Fields::as_string(f.require("inventory"), "$.inventory"));
  if (const auto table = f.string("fragility_table")) c.fragility_table = resolve(base_dir, *table);
  c.track = parse_track(f.require("track"), "$.track", base_dir);
  c.prior = parse_prior_options(f.find("prior"), "$.prior");
  c.seed = parse_seed(f);
  f.finish();
  return c;
}

UpdateCommandConfig parse_update_config(const std::string& text,
                                        const std::filesystem::path& base_dir) {
  const auto doc = parse_document(text);
  Fields f(doc, "$");
  f.find("schema_version");
  UpdateCommandConfig c;
  c.field = resolve(base_dir, Fields::as_string(f.require("field"), "$.field"));
  c.observations = resolve(base_dir, Fields::as_string(f.require("observations"), "$.observations"));
  c.weights = resolve(base_dir, Fields::as_string(f.require("weights"), "$.weights"));
  if (const auto mode = f.string("mode")) {
    validate_at("$.mode", [&] { c.mode = parse_update_mode(*mode); });
  }
  c.gp = parse_gp(f.find("gp"), "$.gp");
  c.seed = parse_seed(f);
  f.finish();
  return c;
}

ExperimentCommandConfig parse_experiment_config(const std::string& text,
                                                const std::filesystem::path& base_dir) {
  const auto doc = parse_document(text);
  Fields f(doc, "$");
  f.find("schema_version");
  ExperimentCommandConfig c;
  auto& s = c.scenario;

  if (const json* inv = f.find("inventory")) {
    Fields fi(*inv, "$.inventory");
    const auto file = fi.string("file");
    const json* synth = fi.find("synthetic");
    if (file && synth) Fields::fail("$.inventory", "give either file or synthetic, not both");
    if (file) s.inventory_file = resolve(base_dir, *file);
    if (synth) {
      Fields fs(*synth, "$.inventory.synthetic");
      fs.count("count", s.synthetic.count);
      fs.number("half_length_m", s.synthetic.half_length);
      fs.number("half_width_m", s.synthetic.half_width);
      fs.number("residential_fraction", s.synthetic.residential_fraction);
      fs.finish();
    }
    fi.finish();
  }
  if (const auto table = f.string("fragility_table")) s.fragility_table = resolve(base_dir, *table);
  if (const json* t = f.find("true_track")) s.true_track = parse_track(*t, "$.true_track", base_dir);
  if (const json* w = f.find("prior_widths_m")) {
    if (!w->is_array()) Fields::fail("$.prior_widths_m", "expected an array of numbers");
    s.prior_widths.clear();
    for (std::size_t k = 0; k < w->size(); ++k) {
      s.prior_widths.push_back(Fields::as_number((*w)[k], fmt::format("$.prior_widths_m[{}]", k)));
    }
  }
  f.count("n_batches", s.n_batches);
  f.number("holdout_fraction", s.holdout_fraction);
  if (const json* list = f.find("strategies")) {
    if (!list->is_array()) Fields::fail("$.strategies", "expected an array of strings");
    s.strategies.clear();
    for (std::size_t k = 0; k < list->size(); ++k) {
      const auto at = fmt::format("$.strategies[{}]", k);
      validate_at(at, [&] {
        s.strategies.push_back(parse_sampling_strategy(Fields::as_string((*list)[k], at)));
      });
    }
  }
  if (const json* list = f.find("modes")) {
    if (!list->is_array()) Fields::fail("$.modes", "expected an array of strings");
    s.modes.clear();
    for (std::size_t k = 0; k < list->size(); ++k) {
      const auto at = fmt::format("$.modes[{}]", k);
      validate_at(at, [&] { s.modes.push_back(parse_update_mode(Fields::as_string((*list)[k], at))); });
    }
  }
  s.observer = parse_observer(f.find("observer"), "$.observer");
  s.prior = parse_prior_options(f.find("prior"), "$.prior");
  s.gp = parse_gp(f.find("gp"), "$.gp");
  if (const json* seed = f.find("seed")) s.seed = Fields::as_count(*seed, "$.seed");
  if (const json* out = f.find("outputs")) {
    Fields fo(*out, "$.outputs");
    if (const auto p = fo.string("csv_snapshots")) {
      c.csv_snapshots = parse_snapshot_policy(*p, "$.outputs.csv_snapshots");
    }
    if (const auto p = fo.string("geojson_snapshots")) {
      c.geojson_snapshots = parse_snapshot_policy(*p, "$.outputs.geojson_snapshots");
    }
    fo.finish();
  }
  f.finish();
  validate_at("$", [&] { s.validate(); });
  return c;
}

}  // namespace fragility
