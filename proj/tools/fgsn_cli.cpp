// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line pipeline driver: simulate, cluster, train, infer, localize,
// evaluate. Every randomized subcommand takes an explicit --seed; flag values
// override --config file entries, which override built-in defaults.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgsn/fgsn.hpp"

namespace fs = std::filesystem;
using namespace fgsn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --config section for one subcommand; accepts either a flat object or a
// top-level object keyed by command name.
json config_section(const std::string& config_path, const std::string& cmd) {
  if (config_path.empty()) return json::object();
  json j = load_json(config_path);
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  if (j.contains(cmd)) {
    if (!j.at(cmd).is_object())
      throw ParseError("config: section '" + cmd + "' must be an object");
    return j.at(cmd);
  }
  return j;
}

template <typename T>
void cfg_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void require_parent_dir(const fs::path& out) {
  fs::path dir = out.parent_path();
  if (!dir.empty() && !fs::is_directory(dir))
    throw std::invalid_argument("output directory does not exist: " +
                                dir.string());
}

void require_out_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::invalid_argument("output directory does not exist: " +
                                dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  require_parent_dir(path);
  detail::write_file_bytes(path, text);
}

std::string csv_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string out;
  std::uint64_t seed = 0;
  int points = 20000;
  int k_fine = 100;
  int k_coarse = 10;
  double extent_xy = 24.0;
  double extent_z = 1.5;
  double length_m = 100.0;
  double step_m = 0.5;
  double camera_height = 2.2;
  int queries = 200;
  double focal = 500.0;
  int image_width = 640;
  int image_height = 480;
  NoiseSpec noise;
  int corr_pairs = 0;
};

PinholeCamera camera_of(double focal, int w, int h) {
  PinholeCamera cam;
  cam.fx = cam.fy = focal;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  return cam;
}

void write_corr_dataset(const fs::path& dir, const CorrDataset& set,
                        const CorrDataSpec& spec) {
  fs::create_directories(dir);
  json manifest;
  manifest["spec"] = spec;
  char name[64];
  json refs = json::array(), tgts = json::array(), classes = json::array();
  for (std::size_t i = 0; i < set.data.ref_maps.size(); ++i) {
    std::snprintf(name, sizeof name, "ref_%03zu.fmap", i);
    save_raster(dir / name, set.data.ref_maps[i]);
    refs.push_back(name);
  }
  for (std::size_t i = 0; i < set.data.tgt_maps.size(); ++i) {
    std::snprintf(name, sizeof name, "tgt_%03zu.fmap", i);
    save_raster(dir / name, set.data.tgt_maps[i]);
    tgts.push_back(name);
  }
  for (std::size_t i = 0; i < set.ref_classes.size(); ++i) {
    std::snprintf(name, sizeof name, "ref_classes_%03zu.lmap", i);
    save_raster(dir / name, set.ref_classes[i]);
    classes.push_back(name);
  }
  manifest["ref_maps"] = refs;
  manifest["tgt_maps"] = tgts;
  manifest["ref_classes"] = classes;
  json pairs = json::array();
  for (const TrainData::Pair& p : set.data.pairs)
    pairs.push_back(json{{"ref_index", p.ref_index},
                         {"tgt_index", p.tgt_index},
                         {"sample", p.sample}});
  manifest["pairs"] = pairs;
  save_json(dir / "manifest.json", manifest);
}

TrainData load_train_data(const fs::path& dir,
                          std::vector<LabelMap>* ref_classes = nullptr) {
  json manifest = load_json(dir / "manifest.json");
  TrainData data;
  for (const json& name : manifest.at("ref_maps"))
    data.ref_maps.push_back(load_feature_map(dir / name.get<std::string>()));
  for (const json& name : manifest.at("tgt_maps"))
    data.tgt_maps.push_back(load_feature_map(dir / name.get<std::string>()));
  for (const json& p : manifest.at("pairs")) {
    TrainData::Pair pair;
    p.at("ref_index").get_to(pair.ref_index);
    p.at("tgt_index").get_to(pair.tgt_index);
    p.at("sample").get_to(pair.sample);
    data.pairs.push_back(std::move(pair));
  }
  if (ref_classes && manifest.contains("ref_classes"))
    for (const json& name : manifest.at("ref_classes"))
      ref_classes->push_back(load_label_map(dir / name.get<std::string>()));
  data.validate();
  return data;
}

int cmd_simulate(const SimulateOpts& o) {
  fs::path out(o.out);
  require_out_dir(out);

  SceneSpec sspec;
  sspec.num_points = o.points;
  sspec.extent_min = Vec3(-o.extent_xy, -o.extent_xy, 0);
  sspec.extent_max = Vec3(o.extent_xy, o.extent_xy, o.extent_z);
  sspec.k_fine = o.k_fine;
  sspec.k_coarse = o.k_coarse;
  sspec.seed = o.seed;
  GeneratedScene scene = gen_scene(sspec);

  TrajectorySpec tspec;
  tspec.length_m = o.length_m;
  tspec.step_m = o.step_m;
  tspec.camera_height_m = o.camera_height;
  tspec.seed = o.seed;
  Trajectory traj = gen_trajectory(tspec);

  PinholeCamera camera = camera_of(o.focal, o.image_width, o.image_height);
  camera.validate();

  save_json(out / "scene_fine.json", json(scene.fine));
  save_json(out / "scene_coarse.json", json(scene.coarse));
  save_json(out / "scene_spec.json", json(sspec));
  save_json(out / "trajectory.json", json(traj));

  const int n_queries = std::min(o.queries, traj.size());
  if (n_queries < 1) throw std::invalid_argument("simulate: no queries");
  json queries = json::array();
  for (int q = 0; q < n_queries; ++q) {
    int step = static_cast<int>(double(q) * double(traj.size()) /
                                double(n_queries));
    std::uint64_t obs_seed = derive_seed(o.seed, 9000 + std::uint64_t(q));
    Observation obs = gen_observations(scene.fine, camera, traj.poses[step],
                                       o.noise, o.k_fine, obs_seed);
    queries.push_back(json{{"step", step},
                           {"pose", traj.poses[step]},
                           {"seed", obs_seed},
                           {"observation", obs}});
  }
  json obs_file;
  obs_file["camera"] = camera;
  obs_file["noise"] = o.noise;
  obs_file["k"] = o.k_fine;
  obs_file["seed"] = o.seed;
  obs_file["camera_height_m"] = traj.camera_height_m;
  obs_file["ground_z"] = traj.ground_z;
  obs_file["queries"] = std::move(queries);
  save_json(out / "observations.json", obs_file);

  if (o.corr_pairs > 0) {
    CorrDataSpec cspec;
    cspec.num_pairs = o.corr_pairs;
    cspec.seed = o.seed;
    CorrDataset set = gen_correspondence_data(cspec);
    write_corr_dataset(out / "corr_data", set, cspec);
  }

  std::printf(
      "simulate: %d points (k=%d/%d), %d poses, %d queries%s -> %s\n",
      o.points, o.k_fine, o.k_coarse, traj.size(), n_queries,
      o.corr_pairs > 0 ? ", correspondence data" : "", o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterOpts {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  int clusters = 8;
  int samples = 512;
  int reduced_dim = 0;
  int kmeans_iters = 100;
};

int cmd_cluster(const ClusterOpts& o) {
  fs::path out(o.out);
  require_out_dir(out);
  TrainData data = load_train_data(o.data);

  TrainConfig tc;
  tc.num_clusters = o.clusters;
  tc.cluster_samples = o.samples;
  tc.reduced_dim = o.reduced_dim;
  tc.kmeans_max_iters = o.kmeans_iters;
  tc.validate();
  detail::ClusterOutcome outcome = detail::recluster(data, tc, o.seed);

  json model;
  model["transform"] = outcome.transform;
  model["centroids"] = outcome.centroids;
  save_json(out / "cluster_model.json", model);
  char name[64];
  for (std::size_t i = 0; i < outcome.ref_labels.size(); ++i) {
    std::snprintf(name, sizeof name, "ref_labels_%03zu.lmap", i);
    save_raster(out / name, outcome.ref_labels[i]);
  }
  std::printf("cluster: %d centroids over %zu maps -> %s\n", o.clusters,
              outcome.ref_labels.size(), o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data;
  std::string out;
  TrainConfig config;
};

int cmd_train(const TrainOpts& o) {
  fs::path out(o.out);
  require_out_dir(out);
  TrainData data = load_train_data(o.data);
  TrainResult result = train_loop(data, o.config);

  save_json(out / "model.json", json(result.head));
  save_json(out / "final_model.json", json(result.final_head));

  std::string trace = "iteration,class_term,corr_term,total\n";
  for (const TraceRow& row : result.trace) {
    trace += std::to_string(row.iteration) + "," + csv_double(row.class_term) +
             "," + csv_double(row.corr_term) + "," + csv_double(row.total) +
             "\n";
  }
  write_text(out / "trace.csv", trace);

  std::string val = "iteration,corr_loss\n";
  for (const auto& [iter, loss] : result.validation)
    val += std::to_string(iter) + "," + csv_double(loss) + "\n";
  write_text(out / "validation.csv", val);

  std::printf("train: %d iterations, best validation %.6f at iteration %d -> %s\n",
              o.config.total_iterations, result.best_validation,
              result.best_iteration, o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferOpts {
  std::string data;
  std::string model;
  std::string out;
  std::string set = "tgt";
  TileSpec tile;
};

int cmd_infer(const InferOpts& o) {
  fs::path out(o.out);
  require_out_dir(out);
  if (o.set != "ref" && o.set != "tgt")
    throw UsageFailure("infer: --set must be 'ref' or 'tgt'");
  TrainData data = load_train_data(o.data);
  ToyHead head = load_json_as<ToyHead>(o.model);

  const std::vector<FeatureMap>& maps =
      o.set == "ref" ? data.ref_maps : data.tgt_maps;
  PatchPredictor predictor = [&](const FeatureMap& patch) {
    return head.forward(patch);
  };
  char name[64];
  for (std::size_t i = 0; i < maps.size(); ++i) {
    ScoreMap scores = blend_predict(maps[i], predictor, o.tile);
    std::snprintf(name, sizeof name, "scores_%03zu.smap", i);
    save_raster(out / name, scores);
    std::snprintf(name, sizeof name, "labels_%03zu.lmap", i);
    save_raster(out / name, scores.argmax_labels());
  }
  std::printf("infer: %zu %s maps scored -> %s\n", maps.size(), o.set.c_str(),
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeOpts {
  std::string scene;
  std::string observations;
  std::string trajectory;
  std::string out = "results.csv";
  std::string method = "ssmc";
  std::uint64_t seed = 0;
  int threads = 1;
  BenchmarkConfig bench;  // iteration/threshold/gsmc/pfsl knobs
  int pfsl_reports = 200;

  LocalizeOpts() { bench.ransac_iterations = 10000; }
};

int cmd_localize(const LocalizeOpts& o) {
  Method method;
  try {
    method = method_from_string(o.method);
  } catch (const std::invalid_argument& e) {
    throw UsageFailure(e.what());
  }
  require_parent_dir(fs::path(o.out));

  LabeledPointCloud cloud = load_json_as<LabeledPointCloud>(o.scene);
  cloud.validate();
  json obs_file = load_json(o.observations);

  BenchmarkConfig cfg = o.bench;
  cfg.method = method;
  cfg.label_granularity = obs_file.at("k").get<int>();
  cfg.noise = obs_file.at("noise").get<NoiseSpec>();
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  PinholeCamera camera = obs_file.at("camera").get<PinholeCamera>();
  const double camera_height = obs_file.at("camera_height_m").get<double>();
  const double ground_z = obs_file.at("ground_z").get<double>();

  if (cfg.label_granularity != static_cast<int>(cloud.num_classes))
    throw std::invalid_argument(
        "localize: observation granularity does not match the scene "
        "(expected k=" + std::to_string(cloud.num_classes) + ")");

  BenchmarkResult result;
  if (method == Method::kPfsl) {
    if (o.trajectory.empty())
      throw UsageFailure("localize: --trajectory is required for pfsl");
    Trajectory traj = load_json_as<Trajectory>(o.trajectory);
    cfg.num_queries = o.pfsl_reports;
    cfg.validate();
    result = run_benchmark(cloud, traj, camera, cfg);
  } else {
    cfg.validate();
    const json& queries = obs_file.at("queries");
    if (queries.empty()) throw std::invalid_argument("localize: no queries");
    result.method = method;
    result.rows.resize(queries.size());
    parallel_for(queries.size(), cfg.threads, [&](std::size_t q) {
      const json& entry = queries.at(q);
      Pose truth = entry.at("pose").get<Pose>();
      Observation obs = entry.at("observation").get<Observation>();
      // The raster is not stored; rebuild it from the recorded seed.
      obs.query_labels = regen_query_labels(
          cloud, camera, truth, cfg.noise, cfg.label_granularity,
          entry.at("seed").get<std::uint64_t>());
      QueryResult row;
      char id[32];
      std::snprintf(id, sizeof id, "q%04zu", q);
      row.query_id = id;
      try {
        detail::localize_one(obs, truth, cloud, camera, camera_height,
                             ground_z, cfg,
                             derive_seed(cfg.seed, 40000 + std::uint64_t(q)),
                             &row);
      } catch (const std::invalid_argument&) {
        // Too few matches survived filtering; the query fails.
      }
      result.rows[q] = std::move(row);
    });
    detail::finalize_benchmark(cfg, &result);
  }

  std::string csv =
      "query_id,success,position_error_m,rotation_error_deg,inlier_count,"
      "inlier_ratio,pre_filter_inlier_ratio,post_filter_inlier_ratio\n";
  long succeeded = 0;
  for (const QueryResult& row : result.rows) {
    succeeded += row.success ? 1 : 0;
    csv += row.query_id + "," + (row.success ? "1" : "0") + "," +
           csv_double(row.position_error_m) + "," +
           csv_double(row.rotation_error_deg) + "," +
           std::to_string(row.inlier_count) + "," +
           csv_double(row.inlier_ratio) + "," +
           csv_double(row.pre_filter_inlier_ratio) + "," +
           csv_double(row.post_filter_inlier_ratio) + "\n";
  }
  write_text(o.out, csv);
  std::printf("localize: method %s, %zu queries, %ld succeeded -> %s\n",
              method_name(method).c_str(), result.rows.size(), succeeded,
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string results;
  std::string out;
  std::string name = "results";
  std::string thresholds;  // "0.25:2,0.5:5,5:10"
  std::string pred_labels;
  std::string ref_labels;
};

RecallThresholds parse_thresholds(const std::string& text) {
  RecallThresholds t;
  if (text.empty()) return t;
  t.levels.clear();
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string item = text.substr(pos, comma == std::string::npos
                                            ? std::string::npos
                                            : comma - pos);
    std::size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw UsageFailure("evaluate: thresholds must be 'm:deg,m:deg,...'");
    try {
      t.levels.emplace_back(std::stod(item.substr(0, colon)),
                            std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw UsageFailure("evaluate: bad threshold entry '" + item + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  t.validate();
  return t;
}

struct ResultRow {
  double position_error_m = 0;
  double rotation_error_deg = 0;
  double inlier_count = 0;
  double inlier_ratio = 0;
};

std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::string bytes = detail::read_file_bytes(path);
  std::vector<ResultRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < bytes.size()) {
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) end = bytes.size();
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t fp = 0;
    while (true) {
      std::size_t comma = line.find(',', fp);
      fields.push_back(line.substr(
          fp, comma == std::string::npos ? std::string::npos : comma - fp));
      if (comma == std::string::npos) break;
      fp = comma + 1;
    }
    if (fields.size() != 8)
      throw ParseError("results CSV: expected 8 columns, got " +
                       std::to_string(fields.size()));
    ResultRow row;
    try {
      row.position_error_m = std::stod(fields[2]);
      row.rotation_error_deg = std::stod(fields[3]);
      row.inlier_count = std::stod(fields[4]);
      row.inlier_ratio = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw ParseError("results CSV: non-numeric field in row '" + line + "'");
    }
    rows.push_back(row);
  }
  return rows;
}

std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf,
                    const char* value_name) {
  std::string out = std::string(value_name) + ",fraction\n";
  for (const auto& [v, f] : cdf)
    out += csv_double(v) + "," + csv_double(f) + "\n";
  return out;
}

int cmd_evaluate(const EvaluateOpts& o) {
  fs::path out(o.out);
  require_out_dir(out);
  RecallThresholds thresholds = parse_thresholds(o.thresholds);

  std::vector<ResultRow> rows = read_results_csv(o.results);
  if (rows.empty())
    throw std::invalid_argument("evaluate: results file has no data rows");

  std::vector<std::pair<double, double>> errors;
  std::vector<double> counts, ratios;
  for (const ResultRow& r : rows) {
    errors.emplace_back(r.position_error_m, r.rotation_error_deg);
    counts.push_back(r.inlier_count);
    ratios.push_back(r.inlier_ratio);
  }
  std::vector<double> recall = recall_table(errors, thresholds);
  write_text(out / "recall.txt",
             format_recall_text({{o.name, recall}}, thresholds));
  write_text(out / "cdf_inlier_count.csv",
             cdf_csv(inlier_cdf(counts), "inlier_count"));
  write_text(out / "cdf_inlier_ratio.csv",
             cdf_csv(inlier_cdf(ratios), "inlier_ratio"));

  std::string nmi_note;
  if (!o.pred_labels.empty() || !o.ref_labels.empty()) {
    if (o.pred_labels.empty() || o.ref_labels.empty())
      throw UsageFailure(
          "evaluate: --pred-labels and --ref-labels must be given together");
    LabelMap pred = load_label_map(o.pred_labels);
    LabelMap ref = load_label_map(o.ref_labels);
    if (pred.height != ref.height || pred.width != ref.width)
      throw std::invalid_argument("evaluate: label map shapes differ");
    AssignmentPair pair;
    pair.x = pred.labels;
    pair.y = ref.labels;
    ContingencyTable table =
        contingency(pair, static_cast<int>(ref.num_classes),
                    static_cast<int>(pred.num_classes));
    double score = nmi_from_contingency(table);
    write_text(out / "nmi.txt", csv_double(score) + "\n");
    std::string tab;
    for (int r = 0; r < table.rows(); ++r) {
      for (int c = 0; c < table.cols(); ++c) {
        tab += std::to_string(table(r, c));
        tab += c + 1 < table.cols() ? ',' : '\n';
      }
    }
    write_text(out / "contingency.csv", tab);
    char note[64];
    std::snprintf(note, sizeof note, ", nmi %.6f", score);
    nmi_note = note;
  }

  std::printf("evaluate: %zu rows, recall", rows.size());
  for (double r : recall) std::printf(" %.1f", r);
  std::printf("%s -> %s\n", nmi_note.c_str(), o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-consistency localization pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file; flag values override its entries");

  // Pre-scan for --config so file values can seed the defaults that CLI11
  // then overrides with explicit flags.
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];

  auto add_config_flag = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "JSON config file; flag values override its entries");
  };

  SimulateOpts sim;
  ClusterOpts clu;
  TrainOpts tra;
  InferOpts inf;
  LocalizeOpts loc;
  EvaluateOpts eva;

  try {
    // simulate
    auto* s = app.add_subcommand("simulate",
                                 "Generate a labeled world, trajectory, and "
                                 "query observations");
    {
      json c = config_section(config_path, "simulate");
      cfg_get(c, "out", sim.out);
      cfg_get(c, "seed", sim.seed);
      cfg_get(c, "points", sim.points);
      cfg_get(c, "k-fine", sim.k_fine);
      cfg_get(c, "k-coarse", sim.k_coarse);
      cfg_get(c, "extent-xy", sim.extent_xy);
      cfg_get(c, "extent-z", sim.extent_z);
      cfg_get(c, "length", sim.length_m);
      cfg_get(c, "step", sim.step_m);
      cfg_get(c, "camera-height", sim.camera_height);
      cfg_get(c, "queries", sim.queries);
      cfg_get(c, "focal", sim.focal);
      cfg_get(c, "image-width", sim.image_width);
      cfg_get(c, "image-height", sim.image_height);
      cfg_get(c, "pixel-noise", sim.noise.pixel_noise_px);
      cfg_get(c, "outlier-rate", sim.noise.outlier_rate);
      cfg_get(c, "mislabel-base", sim.noise.mislabel.base);
      cfg_get(c, "mislabel-per-log2", sim.noise.mislabel.per_log2);
      cfg_get(c, "odometry-std-xy", sim.noise.odometry_std_xy);
      cfg_get(c, "odometry-std-theta", sim.noise.odometry_std_theta);
      cfg_get(c, "splat-radius", sim.noise.splat_radius_px);
      cfg_get(c, "max-matches", sim.noise.max_matches);
      cfg_get(c, "corr-pairs", sim.corr_pairs);
    }
    add_config_flag(s);
    s->add_option("--out", sim.out, "Output directory")->required();
    s->add_option("--seed", sim.seed, "Random seed")->required();
    s->add_option("--points", sim.points, "Scene point count");
    s->add_option("--k-fine", sim.k_fine, "Fine label count");
    s->add_option("--k-coarse", sim.k_coarse, "Coarse label count");
    s->add_option("--extent-xy", sim.extent_xy, "Scene half-extent in x/y (m)");
    s->add_option("--extent-z", sim.extent_z, "Scene height (m)");
    s->add_option("--length", sim.length_m, "Trajectory length (m)");
    s->add_option("--step", sim.step_m, "Trajectory step (m)");
    s->add_option("--camera-height", sim.camera_height, "Camera height (m)");
    s->add_option("--queries", sim.queries, "Query observation count");
    s->add_option("--focal", sim.focal, "Focal length (px)");
    s->add_option("--image-width", sim.image_width, "Image width (px)");
    s->add_option("--image-height", sim.image_height, "Image height (px)");
    s->add_option("--pixel-noise", sim.noise.pixel_noise_px,
                  "Match pixel noise std (px)");
    s->add_option("--outlier-rate", sim.noise.outlier_rate,
                  "Fraction of matches rematched to random points");
    s->add_option("--mislabel-base", sim.noise.mislabel.base,
                  "Label confusion rate at k=1");
    s->add_option("--mislabel-per-log2", sim.noise.mislabel.per_log2,
                  "Label confusion growth per log2(k)");
    s->add_option("--odometry-std-xy", sim.noise.odometry_std_xy,
                  "Odometry translation noise std (m)");
    s->add_option("--odometry-std-theta", sim.noise.odometry_std_theta,
                  "Odometry heading noise std (rad)");
    s->add_option("--splat-radius", sim.noise.splat_radius_px,
                  "Label rendering splat radius (px)");
    s->add_option("--max-matches", sim.noise.max_matches,
                  "Cap on matches per query (0: all visible)");
    s->add_option("--corr-pairs", sim.corr_pairs,
                  "Also emit a correspondence training set with this many "
                  "image pairs");

    // cluster
    auto* k = app.add_subcommand(
        "cluster", "Fit whitening + k-means labels on correspondence data");
    {
      json c = config_section(config_path, "cluster");
      cfg_get(c, "data", clu.data);
      cfg_get(c, "out", clu.out);
      cfg_get(c, "seed", clu.seed);
      cfg_get(c, "clusters", clu.clusters);
      cfg_get(c, "samples", clu.samples);
      cfg_get(c, "reduced-dim", clu.reduced_dim);
      cfg_get(c, "kmeans-iters", clu.kmeans_iters);
    }
    add_config_flag(k);
    k->add_option("--data", clu.data, "Correspondence data directory")
        ->required();
    k->add_option("--out", clu.out, "Output directory")->required();
    k->add_option("--seed", clu.seed, "Random seed")->required();
    k->add_option("--clusters", clu.clusters, "Cluster count");
    k->add_option("--samples", clu.samples, "Feature samples (even)");
    k->add_option("--reduced-dim", clu.reduced_dim,
                  "Whitened dimension (0: keep input dim)");
    k->add_option("--kmeans-iters", clu.kmeans_iters, "Lloyd iteration cap");

    // train
    auto* t = app.add_subcommand(
        "train", "Train the segmentation head with periodic re-clustering");
    {
      json c = config_section(config_path, "train");
      cfg_get(c, "data", tra.data);
      cfg_get(c, "out", tra.out);
      cfg_get(c, "seed", tra.config.seed);
      cfg_get(c, "learning-rate", tra.config.learning_rate);
      cfg_get(c, "momentum", tra.config.momentum);
      cfg_get(c, "weight-decay", tra.config.weight_decay);
      cfg_get(c, "iterations", tra.config.total_iterations);
      cfg_get(c, "recluster-every", tra.config.recluster_interval);
      cfg_get(c, "no-recluster-reset", tra.config.no_recluster_reset);
      cfg_get(c, "clusters", tra.config.num_clusters);
      cfg_get(c, "samples", tra.config.cluster_samples);
      cfg_get(c, "reduced-dim", tra.config.reduced_dim);
      cfg_get(c, "hidden-dims", tra.config.hidden_dims);
      cfg_get(c, "init-std", tra.config.init_std);
      cfg_get(c, "validation-fraction", tra.config.validation_fraction);
    }
    add_config_flag(t);
    t->add_option("--data", tra.data, "Correspondence data directory")
        ->required();
    t->add_option("--out", tra.out, "Output directory")->required();
    t->add_option("--seed", tra.config.seed, "Random seed")->required();
    t->add_option("--learning-rate", tra.config.learning_rate, "SGD step");
    t->add_option("--momentum", tra.config.momentum, "SGD momentum");
    t->add_option("--weight-decay", tra.config.weight_decay, "L2 coefficient");
    t->add_option("--iterations", tra.config.total_iterations,
                  "Total SGD iterations");
    t->add_option("--recluster-every", tra.config.recluster_interval,
                  "Iterations between label regenerations");
    t->add_flag("--no-recluster-reset", tra.config.no_recluster_reset,
                "Keep the final layer across re-clustering");
    t->add_option("--clusters", tra.config.num_clusters,
                  "Pseudo-label cluster count");
    t->add_option("--samples", tra.config.cluster_samples,
                  "Feature samples per re-clustering (even)");
    t->add_option("--reduced-dim", tra.config.reduced_dim,
                  "Whitened dimension (0: keep input dim)");
    t->add_option("--hidden-dims", tra.config.hidden_dims,
                  "Hidden layer widths");
    t->add_option("--init-std", tra.config.init_std, "Weight init std");
    t->add_option("--validation-fraction", tra.config.validation_fraction,
                  "Fraction of pairs held out for validation");

    // infer
    auto* f = app.add_subcommand(
        "infer", "Score feature maps with a trained head, tiled and blended");
    {
      json c = config_section(config_path, "infer");
      cfg_get(c, "data", inf.data);
      cfg_get(c, "model", inf.model);
      cfg_get(c, "out", inf.out);
      cfg_get(c, "set", inf.set);
      cfg_get(c, "patch-size", inf.tile.patch_size);
      cfg_get(c, "stride", inf.tile.stride);
      cfg_get(c, "core-size", inf.tile.core_size);
    }
    add_config_flag(f);
    f->add_option("--data", inf.data, "Correspondence data directory")
        ->required();
    f->add_option("--model", inf.model, "Trained head JSON")->required();
    f->add_option("--out", inf.out, "Output directory")->required();
    f->add_option("--set", inf.set, "Which maps to score: ref or tgt");
    f->add_option("--patch-size", inf.tile.patch_size, "Tile size (px)");
    f->add_option("--stride", inf.tile.stride, "Tile stride (px)");
    f->add_option("--core-size", inf.tile.core_size,
                  "Full-weight core size (px)");

    // localize
    auto* l = app.add_subcommand(
        "localize", "Estimate query poses against the labeled map");
    {
      json c = config_section(config_path, "localize");
      cfg_get(c, "scene", loc.scene);
      cfg_get(c, "observations", loc.observations);
      cfg_get(c, "trajectory", loc.trajectory);
      cfg_get(c, "out", loc.out);
      cfg_get(c, "method", loc.method);
      cfg_get(c, "seed", loc.seed);
      cfg_get(c, "threads", loc.threads);
      cfg_get(c, "iterations", loc.bench.ransac_iterations);
      cfg_get(c, "inlier-threshold", loc.bench.inlier_threshold_px);
      cfg_get(c, "ratio-threshold", loc.bench.ratio_threshold);
      cfg_get(c, "yaw-samples", loc.bench.gsmc_yaw_samples);
      cfg_get(c, "scoring-stride", loc.bench.gsmc_scoring_stride);
      cfg_get(c, "neighborhood", loc.bench.gsmc_neighborhood_px);
      cfg_get(c, "particles", loc.bench.pfsl_particles);
      cfg_get(c, "sharpness", loc.bench.pfsl.likelihood_sharpness);
      cfg_get(c, "reports", loc.pfsl_reports);
    }
    add_config_flag(l);
    l->add_option("--scene", loc.scene, "Labeled point cloud JSON")
        ->required();
    l->add_option("--observations", loc.observations,
                  "Observations JSON from simulate")
        ->required();
    l->add_option("--trajectory", loc.trajectory,
                  "Trajectory JSON (required for pfsl)");
    l->add_option("--out", loc.out, "Results CSV path");
    l->add_option("--method", loc.method,
                  "Localization method: plain, ssmc, gsmc, or pfsl");
    l->add_option("--seed", loc.seed, "Random seed")->required();
    l->add_option("--threads", loc.threads, "Worker thread cap");
    l->add_option("--iterations", loc.bench.ransac_iterations,
                  "RANSAC iterations");
    l->add_option("--inlier-threshold", loc.bench.inlier_threshold_px,
                  "RANSAC inlier threshold (px)");
    l->add_option("--ratio-threshold", loc.bench.ratio_threshold,
                  "Descriptor ratio-test threshold");
    l->add_option("--yaw-samples", loc.bench.gsmc_yaw_samples,
                  "GSMC yaw hypothesis count");
    l->add_option("--scoring-stride", loc.bench.gsmc_scoring_stride,
                  "GSMC scoring subsample stride");
    l->add_option("--neighborhood", loc.bench.gsmc_neighborhood_px,
                  "GSMC label match neighborhood (px)");
    l->add_option("--particles", loc.bench.pfsl_particles,
                  "PFSL particle count");
    l->add_option("--sharpness", loc.bench.pfsl.likelihood_sharpness,
                  "PFSL likelihood sharpness");
    l->add_option("--reports", loc.pfsl_reports,
                  "PFSL report row count");

    // evaluate
    auto* e = app.add_subcommand(
        "evaluate", "Recall table, inlier CDFs, and clustering metrics");
    {
      json c = config_section(config_path, "evaluate");
      cfg_get(c, "results", eva.results);
      cfg_get(c, "out", eva.out);
      cfg_get(c, "name", eva.name);
      cfg_get(c, "thresholds", eva.thresholds);
      cfg_get(c, "pred-labels", eva.pred_labels);
      cfg_get(c, "ref-labels", eva.ref_labels);
    }
    add_config_flag(e);
    e->add_option("--results", eva.results, "Results CSV from localize")
        ->required();
    e->add_option("--out", eva.out, "Output directory")->required();
    e->add_option("--name", eva.name, "Row label in the recall table");
    e->add_option("--thresholds", eva.thresholds,
                  "Recall thresholds as 'm:deg,m:deg,...'");
    e->add_option("--pred-labels", eva.pred_labels,
                  "Predicted label raster (.lmap)");
    e->add_option("--ref-labels", eva.ref_labels,
                  "Reference label raster (.lmap)");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return kExitUsage;
    }

    if (s->parsed()) return cmd_simulate(sim);
    if (k->parsed()) return cmd_cluster(clu);
    if (t->parsed()) return cmd_train(tra);
    if (f->parsed()) return cmd_infer(inf);
    if (l->parsed()) return cmd_localize(loc);
    if (e->parsed()) return cmd_evaluate(eva);
    std::fprintf(stderr, "fgsn: no subcommand\n");
    return kExitUsage;
  } catch (const UsageFailure& e) {
    std::fprintf(stderr, "fgsn: %s\n", e.what());
    return kExitUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "fgsn: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "fgsn: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fgsn: internal error: %s\n", e.what());
    return kExitInternal;
  }
}
