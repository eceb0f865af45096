#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "jcnn/dataset.hpp"
#include "jcnn/errors.hpp"
#include "jcnn/mbfdf.hpp"
#include "jcnn/model.hpp"
#include "jcnn/subbands.hpp"
#include "jcnn/synth.hpp"

namespace jcnn::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kRunSchema = "jcnn.run-report/1";
constexpr const char* kEvalSchema = "jcnn.eval-report/1";
constexpr const char* kMatrixSchema = "jcnn.accuracy-matrix/1";
constexpr const char* kFldSchema = "jcnn.fld-model/1";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_json(const fs::path& path, const json& j) {
  const std::string s = j.dump(2) + "\n";
  jpeg::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

json read_json(const fs::path& path) {
  const auto bytes = jpeg::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json network_json(const NetworkConfig& c) {
  return {{"use_intra", c.use_intra},
          {"use_abs", c.use_abs},
          {"use_bn", c.use_bn},
          {"activation", to_string(c.activation)},
          {"pooling", to_string(c.pooling)},
          {"fc1_units", c.fc1_units},
          {"grid", {c.grid_x, c.grid_y, c.subbands}},
          {"bn_tau", c.bn_tau},
          {"bn_xi", c.bn_xi},
          {"input_scaling", c.input_scaling == CoeffScaling::quantized ? "quantized" : "dequantized"}};
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy()},
          {"correct", m.correct},
          {"total", m.total},
          {"loss", m.loss},
          {"per_class",
           {{"single", {{"count", m.count[0]}, {"correct", m.correct_count[0]}}},
            {"double", {{"count", m.count[1]}, {"correct", m.correct_count[1]}}}}}};
}

json argv_json(const std::vector<std::string>& args) {
  json a = json::array();
  for (const auto& s : args) a.push_back(s);
  return a;
}

std::string accuracy_line(const Metrics& m) {
  return "accuracy=" + fixed(m.accuracy(), 6) + " (" + std::to_string(m.correct) + "/" + std::to_string(m.total) +
         ")";
}

bool has_split(const Manifest& m, Split s) {
  return std::any_of(m.begin(), m.end(), [&](const ManifestRecord& r) { return r.split == s; });
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 0, size = kSourceSize;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count == 0) throw UsageError("--count must be positive");
  if (a.size == 0 || a.size % 16 != 0) throw UsageError("--size must be a positive multiple of 16");
  const auto paths = synthesize_corpus(a.out, a.count, a.size, a.seed);
  out << "wrote " << paths.size() << " images to " << a.out << "\n";
  return kOk;
}

struct BuildArgs {
  std::string pgm_dir, out;
  int qf1 = 0, qf2 = 0;
  std::uint64_t seed = 0;
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  if (!in_qf_grid(a.qf1) || !in_qf_grid(a.qf2)) throw UsageError("--qf1/--qf2 must be in {60, 65, ..., 95}");
  if (a.qf1 == a.qf2) throw UsageError("--qf1 and --qf2 must differ (diagonal cells are not defined)");
  const BuildSummary s = build_dataset(a.pgm_dir, a.out, a.qf1, a.qf2, a.seed);
  out << "tiles train=" << s.train_tiles << " val=" << s.val_tiles << " test=" << s.test_tiles << "\n";
  out << "files=" << s.files << " manifest=" << s.manifest_path.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest, out_ckpt, report, activation = "tanh", pool = "avg", input = "quantized";
  std::uint64_t seed = 0;
  std::size_t epochs = 80, fc1 = 512, batch = 50, validate_from = 41;
  double lr = 0.05, bn_tau = 0.999;
  bool no_abs = false, no_bn = false, no_intra = false, no_timing = false, no_test_curve = false, quiet = false;
  bool validate_from_set = false, dry_run = false;
};

NetworkConfig network_from(const TrainArgs& a) {
  NetworkConfig c;
  c.use_intra = !a.no_intra;
  c.use_abs = !a.no_abs;
  c.use_bn = !a.no_bn;
  c.activation = a.activation == "relu" ? Activation::relu : Activation::tanh;
  c.pooling = a.pool == "max" ? Pooling::max : Pooling::avg;
  c.fc1_units = a.fc1;
  c.bn_tau = a.bn_tau;
  c.input_scaling = a.input == "dequantized" ? CoeffScaling::dequantized : CoeffScaling::quantized;
  return c;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  if (a.epochs == 0) throw UsageError("--epochs must be positive");
  if (a.batch < 2 || a.batch % 2 != 0) throw UsageError("--batch must be even (half single, half double)");
  if (a.fc1 == 0) throw UsageError("--fc1 must be positive");
  if (!(a.lr > 0.0) || !std::isfinite(a.lr)) throw UsageError("--lr must be positive");
  if (!(a.bn_tau > 0.0 && a.bn_tau < 1.0)) throw UsageError("--bn-tau must lie in (0, 1)");
  if (a.validate_from_set && (a.validate_from == 0 || a.validate_from > a.epochs))
    throw UsageError("--validate-from must lie in [1, --epochs]");

  Stopwatch clock;
  const NetworkConfig cfg = network_from(a);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.lr0 = a.lr;
  tc.validate_from = a.validate_from;
  tc.seed = a.seed;
  const json train_cfg = {{"epochs", tc.epochs},
                          {"batch_size", tc.batch_size},
                          {"lr0", tc.lr0},
                          {"lr_decay_every", tc.lr_decay_every},
                          {"lr_keep_fraction", tc.lr_keep_fraction},
                          {"validate_from", std::min(tc.validate_from, tc.epochs)},
                          {"seed", tc.seed}};
  if (a.dry_run) {
    out << json({{"network", network_json(cfg)}, {"train", train_cfg}}).dump(2) << "\n";
    return kOk;
  }

  const fs::path mpath = a.manifest;
  const Manifest m = load_manifest(mpath);
  validate_manifest(m);
  const auto [qf1, qf2] = manifest_qf_pair(m);
  const fs::path dir = mpath.parent_path();
  const PairSet train_set = load_pairs(m, dir, Split::train, cfg);
  const PairSet val_set = load_pairs(m, dir, Split::val, cfg);
  std::optional<SampleSet> test_set;
  if (has_split(m, Split::test)) test_set = load_samples(m, dir, Split::test, cfg);
  if (train_set.size() < a.batch / 2)
    throw DataError("need at least " + std::to_string(a.batch / 2) + " training pairs, manifest has " +
                    std::to_string(train_set.size()));

  TrainCallbacks cb;
  if (!a.quiet)
    cb.on_epoch = [&](const EpochRecord& r) {
      err << "epoch " << r.epoch << " lr=" << fixed(r.lr, 6) << " loss=" << fixed(r.train_loss, 4)
          << " train=" << fixed(r.train_accuracy, 4);
      if (r.val_accuracy) err << " val=" << fixed(*r.val_accuracy, 4);
      if (r.test_accuracy) err << " test=" << fixed(*r.test_accuracy, 4);
      err << "\n";
    };
  const SampleSet* monitor = (test_set && !a.no_test_curve) ? &*test_set : nullptr;
  TrainResult res = train(train_set, val_set, cfg, tc, monitor, cb);

  CheckpointMeta meta;
  meta.epoch = static_cast<std::uint32_t>(res.best_epoch);
  meta.val_accuracy = res.best_val_accuracy;
  meta.seed = a.seed;
  meta.qf1 = static_cast<std::uint32_t>(qf1);
  meta.qf2 = static_cast<std::uint32_t>(qf2);
  save_checkpoint(res.best, meta, a.out_ckpt);

  std::optional<Metrics> test_metrics;
  if (test_set) test_metrics = evaluate(res.best, *test_set);

  json epochs = json::array();
  json c_train = json::array(), c_val = json::array(), c_test = json::array();
  for (const auto& r : res.history) {
    json e = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"train_accuracy", r.train_accuracy}};
    if (r.val_accuracy) e["val_accuracy"] = *r.val_accuracy;
    if (r.val_loss) e["val_loss"] = *r.val_loss;
    if (r.test_accuracy) e["test_accuracy"] = *r.test_accuracy;
    epochs.push_back(e);
    c_train.push_back(r.train_accuracy);
    if (r.val_accuracy) c_val.push_back(*r.val_accuracy);
    if (r.test_accuracy) c_test.push_back(*r.test_accuracy);
  }
  json report;
  report["schema"] = kRunSchema;
  report["command"] = "train";
  report["argv"] = argv_json(argv);
  report["seed"] = a.seed;
  if (!a.no_timing) report["wall_time_s"] = clock.seconds();
  report["config"] = {{"network", network_json(cfg)},
                      {"train", train_cfg},
                      {"qf1", qf1},
                      {"qf2", qf2},
                      {"manifest", a.manifest}};
  report["data"] = {{"train_pairs", train_set.size()},
                    {"val_pairs", val_set.size()},
                    {"test_samples", test_set ? test_set->size() : 0},
                    {"batches_per_epoch", res.batches_per_epoch}};
  report["epochs"] = epochs;
  report["curves"] = {{"train_accuracy", c_train}, {"val_accuracy", c_val}, {"test_accuracy", c_test}};
  report["finite_checks"] = res.finite_checks;
  report["best_epoch"] = res.best_epoch;
  report["best_val_accuracy"] = res.best_val_accuracy;
  if (test_metrics) report["test"] = metrics_json(*test_metrics);
  report["checkpoint"] = a.out_ckpt;
  if (!a.report.empty()) write_json(a.report, report);

  out << "best epoch " << res.best_epoch << " val=" << fixed(res.best_val_accuracy, 6) << "\n";
  if (test_metrics) out << "test " << accuracy_line(*test_metrics) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

json eval_report(const char* method, const std::string& split, int qf1, int qf2, const Metrics& m) {
  json r;
  r["schema"] = kEvalSchema;
  r["method"] = method;
  r["split"] = split;
  r["qf1"] = qf1;
  r["qf2"] = qf2;
  const json mj = metrics_json(m);
  for (auto it = mj.begin(); it != mj.end(); ++it) r[it.key()] = it.value();
  return r;
}

struct EvalArgs {
  std::string ckpt, manifest, split = "test", report, matrix_out;
  std::vector<std::string> matrix;
  bool table = false;
};

int cmd_eval_matrix(const EvalArgs& a, std::ostream& out) {
  const auto& grid = qf_grid();
  auto pos = [&](int qf) -> std::size_t {
    const auto it = std::find(grid.begin(), grid.end(), qf);
    if (it == grid.end()) throw DataError("quality factor " + std::to_string(qf) + " is off the grid");
    return static_cast<std::size_t>(it - grid.begin());
  };
  std::vector<std::vector<std::optional<double>>> cells(grid.size(), std::vector<std::optional<double>>(grid.size()));
  std::string method;
  for (const auto& p : a.matrix) {
    const json r = read_json(p);
    if (!r.contains("schema") || r["schema"] != kEvalSchema) throw FormatError(p + ": not an eval report");
    const std::string m = r.at("method").get<std::string>();
    if (!method.empty() && m != method) throw DataError("matrix mixes methods " + method + " and " + m);
    method = m;
    const int q1 = r.at("qf1").get<int>(), q2 = r.at("qf2").get<int>();
    if (q1 == q2) throw DataError(p + ": diagonal cell (" + std::to_string(q1) + ", " + std::to_string(q2) + ")");
    auto& cell = cells[pos(q1)][pos(q2)];
    if (cell) throw DataError(p + ": duplicate cell (" + std::to_string(q1) + ", " + std::to_string(q2) + ")");
    const double acc = r.at("accuracy").get<double>();
    if (!(acc >= 0.0 && acc <= 1.0)) throw DataError(p + ": accuracy outside [0, 1]");
    cell = acc;
  }

  json rows = json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < grid.size(); ++j) row.push_back(cells[i][j] ? json(*cells[i][j]) : json(nullptr));
    rows.push_back(row);
  }
  json avg = json::array(), present = json::array();
  std::vector<std::optional<double>> averages(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (cells[i][j]) {
        sum += *cells[i][j];
        ++n;
      }
    if (n) averages[j] = sum / static_cast<double>(n);
    avg.push_back(n ? json(*averages[j]) : json(nullptr));
    present.push_back(n);
  }
  json mat;
  mat["schema"] = kMatrixSchema;
  mat["method"] = method;
  mat["qf"] = grid;
  mat["rows"] = "qf1";
  mat["columns"] = "qf2";
  mat["cells"] = rows;
  mat["column_average"] = avg;
  mat["column_cells"] = present;
  if (!a.matrix_out.empty()) write_json(a.matrix_out, mat);

  if (a.table || a.matrix_out.empty()) {
    auto cell_str = [](const std::optional<double>& v) {
      std::string s = v ? fixed(100.0 * *v, 2) : "-";
      return std::string(8 - std::min<std::size_t>(8, s.size()), ' ') + s;
    };
    out << "QF1\\QF2 ";
    for (int q : grid) out << "      " << q;
    out << "\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out << "    " << grid[i] << "  ";
      for (std::size_t j = 0; j < grid.size(); ++j) out << cell_str(cells[i][j]);
      out << "\n";
    }
    out << "Averaged";
    for (const auto& v : averages) out << cell_str(v);
    out << "\n";
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!a.matrix.empty()) {
    if (!a.ckpt.empty() || !a.manifest.empty()) throw UsageError("--matrix excludes --ckpt/--manifest");
    return cmd_eval_matrix(a, out);
  }
  if (a.ckpt.empty() || a.manifest.empty()) throw UsageError("eval needs --ckpt and --manifest (or --matrix)");
  const Split split = parse_split(a.split);
  Checkpoint ck = load_checkpoint(a.ckpt);
  const Manifest m = load_manifest(a.manifest);
  validate_manifest(m);
  const auto [qf1, qf2] = manifest_qf_pair(m);
  const SampleSet set = load_samples(m, fs::path(a.manifest).parent_path(), split, ck.net.config());
  const Metrics met = evaluate(ck.net, set);
  json r = eval_report("jpeg-cnn", a.split, qf1, qf2, met);
  r["checkpoint"] = {{"path", a.ckpt},
                     {"epoch", ck.meta.epoch},
                     {"val_accuracy", ck.meta.val_accuracy},
                     {"seed", ck.meta.seed},
                     {"qf1", ck.meta.qf1},
                     {"qf2", ck.meta.qf2}};
  r["network"] = network_json(ck.net.config());
  if (!a.report.empty()) write_json(a.report, r);
  out << a.split << " " << accuracy_line(met) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct MbfdfArgs {
  std::string manifest, model, split = "test", report, csv;
};

std::vector<std::vector<double>> as_rows(const std::vector<MbfdfVector>& f) {
  std::vector<std::vector<double>> rows;
  rows.reserve(f.size());
  for (const auto& v : f) rows.emplace_back(v.begin(), v.end());
  return rows;
}

std::vector<MbfdfVector> features_of(const CoeffSet& s) {
  std::vector<MbfdfVector> f(s.images.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(f.size()); ++i)
    f[static_cast<std::size_t>(i)] = extract_mbfdf(s.images[static_cast<std::size_t>(i)]);
  return f;
}

void write_csv(const std::string& path, const std::vector<MbfdfVector>& f, const std::vector<int>& labels) {
  std::ostringstream os;
  write_mbfdf_csv(os, f, labels);
  const std::string s = os.str();
  jpeg::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Metrics fld_metrics(const FldModel& model, const std::vector<MbfdfVector>& f, const std::vector<int>& labels) {
  Metrics m;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const int y = labels[i];
    ++m.total;
    ++m.count[y];
    if (fld_classify(model, f[i]) == y) {
      ++m.correct;
      ++m.correct_count[y];
    }
  }
  return m;
}

int cmd_mbfdf_train(const MbfdfArgs& a, std::ostream& out) {
  const Manifest m = load_manifest(a.manifest);
  validate_manifest(m);
  const auto [qf1, qf2] = manifest_qf_pair(m);
  const fs::path dir = fs::path(a.manifest).parent_path();
  // no hyperparameters to select, so the validation tiles train too
  CoeffSet data = load_coeffs(m, dir, Split::train);
  if (has_split(m, Split::val)) {
    CoeffSet v = load_coeffs(m, dir, Split::val);
    std::move(v.images.begin(), v.images.end(), std::back_inserter(data.images));
    data.labels.insert(data.labels.end(), v.labels.begin(), v.labels.end());
  }
  const auto f = features_of(data);
  std::vector<MbfdfVector> c0, c1;
  for (std::size_t i = 0; i < f.size(); ++i) (data.labels[i] ? c1 : c0).push_back(f[i]);
  const auto r0 = as_rows(c0), r1 = as_rows(c1);
  const FldModel model = fld_train(r0, r1);
  json j;
  j["schema"] = kFldSchema;
  j["dims"] = kMbfdfDims;
  j["qf1"] = qf1;
  j["qf2"] = qf2;
  j["threshold"] = model.threshold;
  j["mean0"] = model.mean0;
  j["mean1"] = model.mean1;
  j["w"] = model.w;
  write_json(a.model, j);
  if (!a.csv.empty()) write_csv(a.csv, f, data.labels);
  const Metrics met = fld_metrics(model, f, data.labels);
  if (!a.report.empty()) write_json(a.report, eval_report("mbfdf-fld", "train", qf1, qf2, met));
  out << "train " << accuracy_line(met) << "\n";
  return kOk;
}

FldModel load_fld(const std::string& path) {
  const json j = read_json(path);
  if (!j.contains("schema") || j["schema"] != kFldSchema) throw FormatError(path + ": not an FLD model");
  FldModel m;
  try {
    m.w = j.at("w").get<std::vector<double>>();
    m.threshold = j.at("threshold").get<double>();
    m.mean0 = j.at("mean0").get<double>();
    m.mean1 = j.at("mean1").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (m.w.size() != kMbfdfDims) throw FormatError(path + ": weight vector is not 180-D");
  return m;
}

int cmd_mbfdf_eval(const MbfdfArgs& a, std::ostream& out) {
  const FldModel model = load_fld(a.model);
  const Split split = parse_split(a.split);
  const Manifest m = load_manifest(a.manifest);
  validate_manifest(m);
  const auto [qf1, qf2] = manifest_qf_pair(m);
  const CoeffSet data = load_coeffs(m, fs::path(a.manifest).parent_path(), split);
  const auto f = features_of(data);
  if (!a.csv.empty()) write_csv(a.csv, f, data.labels);
  const Metrics met = fld_metrics(model, f, data.labels);
  json r = eval_report("mbfdf-fld", a.split, qf1, qf2, met);
  r["model"] = a.model;
  if (!a.report.empty()) write_json(a.report, r);
  out << a.split << " " << accuracy_line(met) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string in, out, csv, dtype = "f32", scaling = "quantized";
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  if (a.out.empty() == a.csv.empty()) throw UsageError("extract-dct needs exactly one of --out or --csv");
  const jpeg::CoeffImage c = jpeg::decode_to_coeffs(jpeg::read_file(a.in));
  const CoeffScaling scaling = a.scaling == "dequantized" ? CoeffScaling::dequantized : CoeffScaling::quantized;
  if (!a.out.empty()) {
    const auto bytes = a.dtype == "f64" ? encode_tensor_dump(assemble_subbands<double>(c, scaling))
                                        : encode_tensor_dump(assemble_subbands<float>(c, scaling));
    jpeg::write_file(a.out, bytes);
    out << "wrote " << c.blocks_high << "x" << c.blocks_wide << "x" << kSubbands << " dump to " << a.out << "\n";
    return kOk;
  }
  const Tensor<double> t = assemble_subbands<double>(c, scaling);
  std::ostringstream os;
  os << "row,col";
  for (std::size_t k = 1; k <= kSubbands; ++k) os << ",m" << k;
  os << "\n";
  char buf[32];
  for (std::size_t i = 0; i < c.blocks_high; ++i)
    for (std::size_t j = 0; j < c.blocks_wide; ++j) {
      os << i << "," << j;
      for (std::size_t k = 0; k < kSubbands; ++k) {
        std::snprintf(buf, sizeof buf, ",%.17g", t(i, j, k));
        os << buf;
      }
      os << "\n";
    }
  const std::string s = os.str();
  jpeg::write_file(a.csv, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  out << "wrote " << c.block_count() << " rows to " << a.csv << "\n";
  return kOk;
}

struct PredictArgs {
  std::string ckpt, in;
};

// Truncated, so a probability never prints as 1.000000.
std::string prob_str(double p) {
  auto micro = static_cast<long>(std::floor(p * 1e6));
  micro = std::clamp(micro, 0L, 999999L);
  char buf[16];
  std::snprintf(buf, sizeof buf, "0.%06ld", micro);
  return buf;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const Prediction p = predict_stream(ck.net, jpeg::read_file(a.in));
  out << (p.label ? "double" : "single") << " p=" << prob_str(p.probability) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Double JPEG compression detection toolkit", "jcnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth-images", "Generate a synthetic 512x512 grayscale PGM corpus");
  s_synth->add_option("--out", synth.out, "Output directory")->required();
  s_synth->add_option("--count", synth.count, "Number of images")->required();
  s_synth->add_option("--size", synth.size, "Edge length in pixels");
  s_synth->add_option("--seed", synth.seed, "Seed");

  BuildArgs build;
  auto* s_build = app.add_subcommand("dataset-build", "Split, tile and compress a PGM corpus for one (QF1, QF2)");
  s_build->add_option("--pgm-dir", build.pgm_dir, "Directory of 512x512 P5 images")->required();
  s_build->add_option("--out", build.out, "Output root; files go to <out>/<qf1>_<qf2>/")->required();
  s_build->add_option("--qf1", build.qf1, "First compression quality")->required();
  s_build->add_option("--qf2", build.qf2, "Final compression quality")->required();
  s_build->add_option("--seed", build.seed, "Seed");

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train the multi-branch network on a pair dataset");
  s_train->add_option("--manifest", tr.manifest, "Dataset manifest (JSON lines)")->required();
  s_train->add_option("--out-ckpt", tr.out_ckpt, "Checkpoint to write")->required();
  s_train->add_option("--seed", tr.seed, "Seed for initialization and batch order");
  s_train->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  s_train->add_option("--fc1", tr.fc1, "FC1 width")->capture_default_str();
  s_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  s_train->add_option("--batch", tr.batch, "Batch size (half single, half double)")->capture_default_str();
  s_train->add_option("--validate-from", tr.validate_from, "First epoch considered for model selection")
      ->capture_default_str();
  s_train->add_option("--bn-tau", tr.bn_tau, "Decay of the BN moving statistics")->capture_default_str();
  s_train->add_flag("--no-abs", tr.no_abs, "Drop the ABS layer");
  s_train->add_flag("--no-bn", tr.no_bn, "Drop batch normalization");
  s_train->add_flag("--no-intra", tr.no_intra, "Keep only the inter sub-band branch");
  s_train->add_option("--activation", tr.activation, "tanh or relu")
      ->check(CLI::IsMember({"tanh", "relu"}))
      ->capture_default_str();
  s_train->add_option("--pool", tr.pool, "avg or max")->check(CLI::IsMember({"avg", "max"}))->capture_default_str();
  s_train->add_option("--input", tr.input, "Coefficient scaling: quantized or dequantized")
      ->check(CLI::IsMember({"quantized", "dequantized"}))
      ->capture_default_str();
  s_train->add_option("--report", tr.report, "Run report (JSON) to write");
  s_train->add_flag("--no-timing", tr.no_timing, "Omit wall time so reports are byte-reproducible");
  s_train->add_flag("--no-test-curve", tr.no_test_curve, "Skip the per-epoch test accuracy");
  s_train->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");
  s_train->add_flag("--dry-run", tr.dry_run, "Print the resolved configuration and exit");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint, or assemble an accuracy matrix");
  s_eval->add_option("--ckpt", ev.ckpt, "Checkpoint");
  s_eval->add_option("--manifest", ev.manifest, "Dataset manifest");
  s_eval->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  s_eval->add_option("--report", ev.report, "Eval report (JSON) to write");
  s_eval->add_option("--matrix", ev.matrix, "Eval reports to aggregate into a QF1 x QF2 matrix");
  s_eval->add_option("--out", ev.matrix_out, "Matrix JSON to write (with --matrix)");
  s_eval->add_flag("--table", ev.table, "Print the matrix as a text table");

  MbfdfArgs mb;
  auto* s_mb = app.add_subcommand("mbfdf", "First-digit features with a Fisher discriminant");
  s_mb->require_subcommand(1);
  auto* s_mb_train = s_mb->add_subcommand("train", "Fit the discriminant on the train and val splits");
  s_mb_train->add_option("--manifest", mb.manifest, "Dataset manifest")->required();
  s_mb_train->add_option("--out-model", mb.model, "Model (JSON) to write")->required();
  s_mb_train->add_option("--report", mb.report, "Eval report of the training fit");
  s_mb_train->add_option("--csv", mb.csv, "Export the training features");
  auto* s_mb_eval = s_mb->add_subcommand("eval", "Evaluate a fitted discriminant");
  s_mb_eval->add_option("--model", mb.model, "Model (JSON)")->required();
  s_mb_eval->add_option("--manifest", mb.manifest, "Dataset manifest")->required();
  s_mb_eval->add_option("--split", mb.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  s_mb_eval->add_option("--report", mb.report, "Eval report (JSON) to write");
  s_mb_eval->add_option("--csv", mb.csv, "Export the evaluated features");

  ExtractArgs ex;
  auto* s_ex = app.add_subcommand("extract-dct", "Dump the 20 AC sub-bands of a JPEG");
  s_ex->add_option("--in", ex.in, "JPEG file")->required();
  s_ex->add_option("--out", ex.out, "Binary tensor dump");
  s_ex->add_option("--csv", ex.csv, "Per-block CSV, one column per mode");
  s_ex->add_option("--dtype", ex.dtype, "f32 or f64 (dump only)")->check(CLI::IsMember({"f32", "f64"}));
  s_ex->add_option("--scaling", ex.scaling, "quantized or dequantized")
      ->check(CLI::IsMember({"quantized", "dequantized"}));

  PredictArgs pr;
  auto* s_pr = app.add_subcommand("predict", "Classify one JPEG");
  s_pr->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  s_pr->add_option("--in", pr.in, "JPEG file")->required();

  std::vector<std::string> argv_store{"jcnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (s_synth->parsed()) return cmd_synth(synth, out);
    if (s_build->parsed()) return cmd_build(build, out);
    if (s_train->parsed()) {
      tr.validate_from_set = s_train->count("--validate-from") > 0;
      return cmd_train(tr, args, out, err);
    }
    if (s_eval->parsed()) return cmd_eval(ev, out);
    if (s_mb_train->parsed()) return cmd_mbfdf_train(mb, out);
    if (s_mb_eval->parsed()) return cmd_mbfdf_eval(mb, out);
    if (s_ex->parsed()) return cmd_extract(ex, out);
    if (s_pr->parsed()) return cmd_predict(pr, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const CodecError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  err << "error: no command\n";
  return kUsage;
}

}  // namespace jcnn::cli
