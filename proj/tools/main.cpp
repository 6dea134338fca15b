// Command-line driver: one experiment per invocation, outputs under --out.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <unbiased/unbiased.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace unbiased;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Key {
  std::string name;
  json fallback;
  std::string doc;
};
using Schema = std::vector<Key>;

const std::map<std::string, Schema> &schemas() {
  static const std::map<std::string, Schema> all{
      {"snr-curves",
       {{"m_list", json::array({16, 32, 64, 128}), "sensor counts, one curve each"},
        {"d_list", json::array({1, 3}), "parameters per source"},
        {"snr_min", 1.0, "first SNR grid value (>= 1)"},
        {"snr_max", 20.0, "last SNR grid value"},
        {"snr_points", 381, "number of equally spaced grid values"}}},
      {"prob-map",
       {{"sensors", 32, "electrodes on the upper half of the rim"},
        {"rings", 16, "radial grid rings"},
        {"spokes", 48, "angular grid spokes"},
        {"radius", 1.0, "disk radius"},
        {"noise_levels", json::array({0.05, 0.15}), "noise RMS / lead-field RMS, one map each"},
        {"raster", 128, "PGM side length"}}},
      {"disk",
       {{"sensors", 32, "electrodes on the upper half of the rim"},
        {"rings", 16, "radial grid rings"},
        {"spokes", 48, "angular grid spokes"},
        {"radius", 1.0, "disk radius"},
        {"noise_level", 0.05, "noise RMS / clean-signal RMS"},
        {"trials", 100, "noise realizations per scenario"},
        {"scenarios", json::array({"A", "B", "C"}), "scenario labels to run"},
        {"two_source_fits", false, "also run the exhaustive two-source mixture vs MNE (about 1 s per trial)"}}},
      {"bounds",
       {{"matrix", "", "path to the operator (CSV or binary matrix file), required"},
        {"d", 1, "columns per block"},
        {"N", 1, "source count for the coherence conditions"},
        {"ratios", "", "optional n x n strength-ratio matrix file"}}},
      {"phantom",
       {{"size", 64, "image side (power of two, >= 16)"},
        {"lines", 6, "radial Fourier lines"},
        {"noise_kind", "iid", "none, iid or correlated"},
        {"noise_level", 0.3, "noise RMS / image RMS"},
        {"correlation_length", 2.0, "pixels, correlated noise only"},
        {"methods", json::array({"stvsb", "image_uge"}), "subset of stvsb, image_uge"},
        {"ec", false, "also project the image_uge result onto the phantom gray levels"},
        {"tv_mu", 1.0, "data weight"},
        {"tv_lambda", 1.0, "splitting weight"},
        {"tv_iterations", 100, "outer iterations"},
        {"tv_inner_tol", 1e-6, "inner relative-change tolerance"},
        {"tv_max_inner", 50, "inner iteration cap"},
        {"uge_prior_strength", 10.0, "weight of the cyclic-derivative prior"},
        {"uge_window", 62, "cyclic window side"},
        {"uge_samples", 1000, "window draws"},
        {"uge_cg_tol", 1e-6, "relative CG tolerance per window"},
        {"uge_cg_max_iter", 500, "CG iteration cap per window"}}},
      {"ncf",
       {{"a", 1.0, "numerator degrees of freedom"},
        {"b", 5.0, "denominator degrees of freedom"},
        {"lambda", 0.0, "noncentrality"},
        {"x_min", 0.0, "first abscissa"},
        {"x_max", 10.0, "last abscissa"},
        {"points", 101, "number of abscissae"}}},
  };
  return all;
}

bool type_matches(const json &fallback, const json &value) {
  if (fallback.is_boolean()) return value.is_boolean();
  if (fallback.is_number_integer()) return value.is_number_integer();
  if (fallback.is_number()) return value.is_number();
  if (fallback.is_string()) return value.is_string();
  if (fallback.is_array()) {
    if (!value.is_array()) return false;
    if (fallback.empty()) return true;
    for (const auto &v : value)
      if (!type_matches(fallback.front(), v)) return false;
    return true;
  }
  return false;
}

/// Defaults overlaid with `given`; unknown keys and type mismatches are usage errors.
json resolve_params(const std::string &experiment, const json &given) {
  const Schema &schema = schemas().at(experiment);
  if (!given.is_object()) throw UsageError("params must be an object");
  for (const auto &[k, v] : given.items()) {
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const Key &key) { return key.name == k; });
    if (it == schema.end()) throw UsageError("unknown key '" + k + "' for experiment " + experiment);
    if (!type_matches(it->fallback, v)) throw UsageError("key '" + k + "' has the wrong type");
  }
  json out = json::object();
  for (const auto &key : schema) out[key.name] = given.contains(key.name) ? given.at(key.name) : key.fallback;
  return out;
}

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  json params;
};

RunConfig load_config(const std::string &experiment, const std::string &path) {
  RunConfig cfg;
  cfg.experiment = experiment;
  json given = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error &e) {
      throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw UsageError("config must be a JSON object");
    for (const auto &[k, v] : doc.items()) {
      if (k == "experiment") {
        if (!v.is_string() || v.get<std::string>() != experiment)
          throw UsageError("config experiment does not match subcommand " + experiment);
      } else if (k == "seed") {
        if (!v.is_number_unsigned()) throw UsageError("seed must be a non-negative integer");
        cfg.seed = v.get<std::uint64_t>();
      } else if (k == "output_dir") {
        if (!v.is_string()) throw UsageError("output_dir must be a string");
        cfg.output_dir = v.get<std::string>();
      } else if (k == "params") {
        given = v;
      } else {
        throw UsageError("unknown top-level key '" + k + "'");
      }
    }
  }
  cfg.params = resolve_params(experiment, given);
  return cfg;
}

// Small helpers so every file goes through one place.
class Artifacts {
public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  fs::path add(const std::string &name) {
    names_.push_back(name);
    return dir_ / name;
  }
  std::ofstream open(const std::string &name) {
    std::ofstream out(add(name), std::ios::binary);
    if (!out) throw FormatError("cannot open " + (dir_ / name).string());
    return out;
  }
  const std::vector<std::string> &names() const { return names_; }
  const fs::path &dir() const { return dir_; }

private:
  fs::path dir_;
  std::vector<std::string> names_;
};

std::string percent_tag(double level) {
  std::ostringstream s;
  s << "noise" << std::lround(level * 100.0) << "pct";
  return s.str();
}

void run_snr_curves(const json &p, Artifacts &art) {
  const auto m_list = p["m_list"].get<std::vector<int>>();
  const auto d_list = p["d_list"].get<std::vector<int>>();
  const double lo = p["snr_min"], hi = p["snr_max"];
  const int points = p["snr_points"];
  if (points < 2 || !(hi > lo)) throw UsageError("snr grid needs snr_points >= 2 and snr_max > snr_min");
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i) grid[i] = lo + (hi - lo) * i / (points - 1);
  auto cross = art.open("crossings.csv");
  cross << "d,m_a,m_b,snr\n";
  for (int d : d_list) {
    const auto curves = snr_curves(m_list, d, grid);
    for (const auto &c : curves) {
      std::ostringstream name;
      name << "snr_curve_d" << d << "_m" << c.m << ".csv";
      write_curve_csv(art.add(name.str()), c);
    }
    for (std::size_t i = 0; i < curves.size(); ++i)
      for (std::size_t j = i + 1; j < curves.size(); ++j) {
        const auto x = crossing_point(curves[i], curves[j]);
        cross << d << ',' << curves[i].m << ',' << curves[j].m << ',' << (x ? format_real(*x) : "nan") << '\n';
      }
  }
}

disk::DiskGeometry geometry_from(const json &p) {
  auto g = disk::make_geometry(p["sensors"], p["rings"], p["spokes"], p["radius"]);
  g.validate();
  return g;
}

void run_prob_map(const json &p, Artifacts &art) {
  const auto g = geometry_from(p);
  const auto levels = p["noise_levels"].get<std::vector<double>>();
  std::vector<std::string> tags;
  for (double level : levels) {
    const std::string tag = percent_tag(level);
    if (std::find(tags.begin(), tags.end(), tag) != tags.end()) throw UsageError("noise levels must differ by >= 1%");
    tags.push_back(tag);
    const auto map = disk::spatial_prob_map(g, level);
    disk::write_map_csv(art.add("prob_map_" + tag + ".csv"), g, map, level);
    disk::write_map_pgm(art.add("prob_map_" + tag + ".pgm"), g, map, p["raster"]);
  }
}

void run_disk(const json &p, std::uint64_t seed, Artifacts &art) {
  const auto g = geometry_from(p);
  const double level = p["noise_level"];
  const int trials = p["trials"];
  auto summary = art.open("summary.csv");
  summary << "scenario,metric,value\n";
  for (const auto &label_str : p["scenarios"].get<std::vector<std::string>>()) {
    if (label_str.size() != 1) throw UsageError("scenario labels are single letters");
    const char label = label_str[0];
    const auto s = disk::scenario(label, g);
    {
      auto out = art.open(std::string("scenario_") + label + ".yaml");
      disk::write_scenario(out, s);
    }
    const std::uint64_t run_seed = disk::trial_seed(seed, label);
    if (s.sources.size() == 1) {
      const auto r = disk::single_source_trials(g, s, level, trials, run_seed);
      auto out = art.open(std::string("scenario_") + label + "_trials.csv");
      out << "trial,mixture_error,mne_error\n";
      for (int t = 0; t < trials; ++t)
        out << t << ',' << format_real(r.mixture_error[t]) << ',' << format_real(r.mne_error[t]) << '\n';
      summary << label << ",mixture_wins," << r.mixture_wins << '\n';
    } else {
      const auto r = disk::two_source_peak_trials(g, s, level, trials, run_seed);
      auto out = art.open(std::string("scenario_") + label + "_trials.csv");
      out << "trial,block_found,fixed_found\n";
      for (int t = 0; t < trials; ++t) out << t << ',' << r.block_found[t] << ',' << r.fixed_found[t] << '\n';
      summary << label << ",block_resolved," << r.block_resolved << '\n';
      summary << label << ",fixed_unresolved," << r.fixed_unresolved << '\n';
      if (p["two_source_fits"].get<bool>()) {
        const auto l = disk::two_source_localization_trials(g, s, level, trials, run_seed);
        auto loc = art.open(std::string("scenario_") + label + "_localization.csv");
        loc << "trial,mixture_error,mne_error\n";
        for (int t = 0; t < trials; ++t)
          loc << t << ',' << format_real(l.mixture_error[t]) << ',' << format_real(l.mne_error[t]) << '\n';
        summary << label << ",mixture_wins," << l.mixture_wins << '\n';
      }
    }
    summary << label << ",trials," << trials << '\n';
  }
}

void run_bounds(const json &p, Artifacts &art) {
  const std::string path = p["matrix"];
  if (path.empty()) throw UsageError("bounds needs params.matrix");
  const Eigen::MatrixXd U = io::read_matrix(path);
  std::optional<Eigen::MatrixXd> ratios;
  if (const std::string r = p["ratios"]; !r.empty()) ratios = io::read_matrix(r);
  const auto report = recovery_report(U, p["d"], ratios, p["N"]);
  write_report_text(std::cout, report);
  auto out = art.open("report.csv");
  write_report_csv(out, report);
}

void run_phantom(const json &p, std::uint64_t seed, Artifacts &art) {
  using namespace phantom;
  const int s = p["size"];
  if (s < 16 || (s & (s - 1)) != 0) throw UsageError("size must be a power of two >= 16");
  const Image truth = shepp_logan(s);
  const SamplingMask mask = radial_mask(s, p["lines"]);
  NoiseSpec noise;
  noise.kind = noise_kind_from_string(p["noise_kind"]);
  noise.level = noise.kind == NoiseKind::none ? 0.0 : p["noise_level"].get<double>();
  noise.correlation_length = p["correlation_length"];
  noise.seed = seed;
  noise.validate();
  const FourierData data = fourier_sample(truth, mask, noise);

  write_pgm(art.add("truth.pgm"), truth);
  io::write_binary(art.add("truth.bin"), truth);
  Image mask_img(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) mask_img(r, c) = mask.mask(r, c) ? 1.0 : 0.0;
  write_pgm(art.add("mask.pgm"), mask_img);

  auto summary = art.open("summary.csv");
  summary << "key,value\n";
  summary << "mask_size," << mask.count() << '\n';
  summary << "gradient_support," << gradient_support(truth) << '\n';
  summary << "pixel_support," << (truth.array() != 0.0).count() << '\n';

  const auto methods = p["methods"].get<std::vector<std::string>>();
  for (const auto &m : methods)
    if (m != "stvsb" && m != "image_uge") throw UsageError("unknown phantom method '" + m + "'");
  const auto wants = [&](const char *m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };

  if (wants("stvsb")) {
    TVParams tv;
    tv.mu = p["tv_mu"];
    tv.lambda = p["tv_lambda"];
    tv.iterations = p["tv_iterations"];
    tv.inner_tol = p["tv_inner_tol"];
    tv.max_inner = p["tv_max_inner"];
    const auto rec = split_bregman_tv(data, tv, &truth);
    write_pgm(art.add("stvsb.pgm"), rec.image);
    io::write_binary(art.add("stvsb.bin"), rec.image);
    write_error_trace(art.add("stvsb_trace.csv"), rec.error_trace);
    summary << "stvsb_error," << format_real(rec.error_trace.back()) << '\n';
  }
  const bool ec = p["ec"];
  if (wants("image_uge") || ec) {
    ImageUgeParams up;
    up.prior_strength = p["uge_prior_strength"];
    up.window = p["uge_window"];
    up.samples = p["uge_samples"];
    up.cg_tol = p["uge_cg_tol"];
    up.cg_max_iter = p["uge_cg_max_iter"];
    up.seed = disk::trial_seed(seed, 1);
    // A noiseless run still needs a likelihood scale; use a small fraction of the data RMS.
    const double sigma =
        data.noise_sigma > 0.0 ? data.noise_sigma : 1e-3 * std::sqrt(truth.squaredNorm() / static_cast<double>(truth.size()));
    const auto rec = image_uge(data, sigma, up, &truth);
    write_pgm(art.add("image_uge.pgm"), rec.image);
    io::write_binary(art.add("image_uge.bin"), rec.image);
    write_error_trace(art.add("image_uge_trace.csv"), rec.error_trace);
    summary << "image_uge_error," << format_real(rec.error_trace.back()) << '\n';
    if (ec) {
      const auto fit = ec_project(rec.image, distinct_levels(truth));
      write_pgm(art.add("ec.pgm"), fit.image);
      io::write_binary(art.add("ec.bin"), fit.image);
      summary << "ec_error," << format_real(relative_error(fit.image, truth)) << '\n';
      summary << "ec_gain," << format_real(fit.gain) << '\n';
      summary << "ec_offset," << format_real(fit.offset) << '\n';
    }
  }
}

void run_ncf(const json &p, Artifacts &art) {
  const NoncentralF dist{p["a"], p["b"], p["lambda"]};
  dist.validate();
  const double lo = p["x_min"], hi = p["x_max"];
  const int points = p["points"];
  if (points < 2 || !(hi > lo) || lo < 0.0) throw UsageError("ncf grid needs points >= 2 and 0 <= x_min < x_max");
  auto out = art.open("ncf.csv");
  out << "x,cdf,terms\n";
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    const auto e = ncf_cdf_detail(dist, x);
    out << format_real(x) << ',' << format_real(e.value) << ',' << e.terms << '\n';
  }
}

void write_manifest(const RunConfig &cfg, int threads, double seconds, const Artifacts &art) {
  json m;
  m["experiment"] = cfg.experiment;
  m["version"] = unbiased::version;
  m["seed"] = cfg.seed;
  m["threads"] = threads;
  m["output_dir"] = cfg.output_dir.string();
  m["params"] = cfg.params;
  m["files"] = art.names();
  m["wall_time_seconds"] = seconds;
  std::ofstream out(art.dir() / "manifest.json", std::ios::binary);
  out << m.dump(2) << '\n';
}

void run(const RunConfig &cfg, int threads) {
  const auto start = std::chrono::steady_clock::now();
  thread_count() = threads;
  Artifacts art(cfg.output_dir);
  const json &p = cfg.params;
  if (cfg.experiment == "snr-curves") run_snr_curves(p, art);
  else if (cfg.experiment == "prob-map") run_prob_map(p, art);
  else if (cfg.experiment == "disk") run_disk(p, cfg.seed, art);
  else if (cfg.experiment == "bounds") run_bounds(p, art);
  else if (cfg.experiment == "phantom") run_phantom(p, cfg.seed, art);
  else if (cfg.experiment == "ncf") run_ncf(p, art);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(cfg, threads, seconds, art);
}

void describe(const std::string &experiment, std::ostream &out) {
  const auto it = schemas().find(experiment);
  if (it == schemas().end()) throw UsageError("unknown experiment '" + experiment + "'");
  out << experiment << " params (config: {\"experiment\", \"seed\", \"output_dir\", \"params\": {...}}):\n";
  for (const auto &k : it->second) out << "  " << k.name << " = " << k.fallback.dump() << "  # " << k.doc << '\n';
}

int fail(const char *kind, int code, const std::string &message) {
  json e;
  e["error"] = kind;
  e["exit_code"] = code;
  e["message"] = message;
  std::cerr << e.dump() << '\n';
  return code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Unbiased estimation experiments"};
  app.require_subcommand(1);

  struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
  };
  std::map<std::string, Flags> flags;
  std::map<std::string, CLI::App *> subs;
  for (const auto &[name, schema] : schemas()) {
    auto *sub = app.add_subcommand(name, "run the " + name + " experiment");
    auto &f = flags[name];
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--seed", f.seed, "seed (overrides the config)");
    sub->add_option("--out", f.out, "output directory (overrides the config)");
    sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
    subs[name] = sub;
  }
  auto *ver = app.add_subcommand("version", "print build metadata");
  std::string described;
  auto *desc = app.add_subcommand("describe", "list an experiment's keys with defaults");
  desc->add_option("experiment", described, "experiment name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << app.help();
    return fail("usage", 2, e.what());
  }

  try {
    if (ver->parsed()) {
      std::cout << "unbiased " << unbiased::version << "\ncompiler: " << __VERSION__ << "\nbuilt: " << __DATE__ << ' '
                << __TIME__ << '\n';
      return 0;
    }
    if (desc->parsed()) {
      describe(described, std::cout);
      return 0;
    }
    for (const auto &[name, sub] : subs) {
      if (!sub->parsed()) continue;
      const Flags &f = flags[name];
      RunConfig cfg = load_config(name, f.config);
      if (f.seed) cfg.seed = *f.seed;
      if (!f.out.empty()) cfg.output_dir = f.out;
      run(cfg, f.threads);
      return 0;
    }
  } catch (const UsageError &e) {
    return fail("usage", 2, e.what());
  } catch (const json::exception &e) {
    return fail("usage", 2, e.what());
  } catch (const NumericalError &e) {
    return fail("numerical", 1, e.what());
  } catch (const Error &e) {
    return fail("module", 1, e.what());
  } catch (const std::exception &e) {
    return fail("internal", 1, e.what());
  }
  return fail("usage", 2, "no experiment selected");
}
