// The command-line tool, driven in-process through cli::run.

#include <gtest/gtest.h>

#include <cstring>
#include <memory>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "jcnn/dataset.hpp"
#include "jcnn/model.hpp"
#include "jcnn/subbands.hpp"
#include "test_util.hpp"

using namespace jcnn;
using jcnn::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult jcnn_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  const auto b = jpeg::read_file(p);
  return json::parse(std::string(b.begin(), b.end()));
}

void write_text(const fs::path& p, const std::string& s) {
  jpeg::write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// One small corpus and one (60, 95) dataset shared by the whole suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("cli");
    ASSERT_EQ(jcnn_run({"synth-images", "--out", pgm().string(), "--count", "4", "--seed", "11"}).code, 0);
    const CliResult r = jcnn_run({"dataset-build", "--pgm-dir", pgm().string(), "--out", (root() / "ds").string(),
                            "--qf1", "60", "--qf2", "95", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { dir_.reset(); }

  static fs::path root() { return dir_->path(); }
  static fs::path pgm() { return root() / "pgm"; }
  static fs::path manifest() { return root() / "ds" / "60_95" / "manifest.jsonl"; }

  static std::unique_ptr<TempDir> dir_;
};

std::unique_ptr<TempDir> Cli::dir_;

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = jpeg::read_file(e.path());
  return out;
}

}  // namespace

TEST_F(Cli, DatasetBuildLayout) {
  const Manifest m = load_manifest(manifest());
  ASSERT_EQ(m.size(), 32u);
  std::size_t singles = 0;
  for (const auto& r : m) {
    EXPECT_TRUE(fs::exists(manifest().parent_path() / r.file_path)) << r.file_path;
    singles += r.label == Label::single;
  }
  EXPECT_EQ(singles, 16u);
  std::size_t files = 0;
  for (const auto& sub : {"single", "double"})
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(manifest().parent_path() / sub)) ++files;
  EXPECT_EQ(files, 32u);
}

TEST_F(Cli, DatasetRebuildIsByteIdentical) {
  const CliResult r = jcnn_run({"dataset-build", "--pgm-dir", pgm().string(), "--out", (root() / "ds2").string(),
                          "--qf1", "60", "--qf2", "95", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(snapshot(root() / "ds" / "60_95"), snapshot(root() / "ds2" / "60_95"));
}

TEST_F(Cli, DatasetBuildRejectsBadCells) {
  auto build = [&](const char* q1, const char* q2) {
    return jcnn_run({"dataset-build", "--pgm-dir", pgm().string(), "--out", (root() / "bad").string(), "--qf1", q1,
                     "--qf2", q2})
        .code;
  };
  EXPECT_EQ(build("70", "70"), cli::kUsage);
  EXPECT_EQ(build("62", "70"), cli::kUsage);
  EXPECT_FALSE(fs::exists(root() / "bad" / "70_70"));
  EXPECT_EQ(jcnn_run({"dataset-build", "--pgm-dir", (root() / "nowhere").string(), "--out", (root() / "bad").string(),
                      "--qf1", "60", "--qf2", "70"})
                .code,
            cli::kDataError);
}

TEST(CliUsage, ParseErrorsAndHelp) {
  EXPECT_EQ(jcnn_run({}).code, cli::kUsage);
  EXPECT_EQ(jcnn_run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(jcnn_run({"train"}).code, cli::kUsage);
  EXPECT_EQ(jcnn_run({"--help"}).code, cli::kOk);
  const CliResult h = jcnn_run({"train", "--help"});
  EXPECT_EQ(h.code, cli::kOk);
  EXPECT_NE(h.out.find("--validate-from"), std::string::npos);
}

TEST(CliUsage, TrainDryRunDefaults) {
  const CliResult r = jcnn_run({"train", "--manifest", "m.jsonl", "--out-ckpt", "c.ckpt", "--dry-run"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["train"]["epochs"], 80);
  EXPECT_EQ(j["train"]["batch_size"], 50);
  EXPECT_DOUBLE_EQ(j["train"]["lr0"].get<double>(), 0.05);
  EXPECT_EQ(j["train"]["lr_decay_every"], 20);
  EXPECT_DOUBLE_EQ(j["train"]["lr_keep_fraction"].get<double>(), 0.3);
  EXPECT_EQ(j["train"]["validate_from"], 41);
  EXPECT_EQ(j["network"]["fc1_units"], 512);
  EXPECT_EQ(j["network"]["use_intra"], true);
  EXPECT_EQ(j["network"]["activation"], "tanh");
  EXPECT_EQ(j["network"]["pooling"], "avg");

  const json a = json::parse(jcnn_run({"train", "--manifest", "m", "--out-ckpt", "c", "--dry-run", "--no-intra",
                                       "--no-bn", "--activation", "relu", "--pool", "max", "--epochs", "10"})
                                 .out);
  EXPECT_EQ(a["network"]["use_intra"], false);
  EXPECT_EQ(a["network"]["use_bn"], false);
  EXPECT_EQ(a["network"]["activation"], "relu");
  EXPECT_EQ(a["network"]["pooling"], "max");
  EXPECT_EQ(a["train"]["validate_from"], 10);  // clamped to the last epoch
}

TEST(CliUsage, TrainRejectsBadValues) {
  auto code = [](std::vector<std::string> extra) {
    std::vector<std::string> args{"train", "--manifest", "m", "--out-ckpt", "c", "--dry-run"};
    args.insert(args.end(), extra.begin(), extra.end());
    return jcnn_run(args).code;
  };
  EXPECT_EQ(code({"--epochs", "0"}), cli::kUsage);
  EXPECT_EQ(code({"--batch", "7"}), cli::kUsage);
  EXPECT_EQ(code({"--lr", "-1"}), cli::kUsage);
  EXPECT_EQ(code({"--activation", "sigmoid"}), cli::kUsage);
  EXPECT_EQ(code({"--epochs", "5", "--validate-from", "6"}), cli::kUsage);
  EXPECT_EQ(code({"--bn-tau", "1"}), cli::kUsage);
}

TEST_F(Cli, TrainEvalPredictRoundTrip) {
  const fs::path ck = root() / "m.ckpt", rep = root() / "run.json";
  std::vector<std::string> args{"train", "--manifest", manifest().string(), "--out-ckpt", ck.string(), "--epochs", "2",
                                "--batch", "10", "--seed", "5", "--report", rep.string(), "--no-timing", "--quiet"};
  const CliResult r = jcnn_run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.err.empty());
  const json j = read_json(rep);
  EXPECT_EQ(j["schema"], "jcnn.run-report/1");
  EXPECT_FALSE(j.contains("wall_time_s"));
  EXPECT_EQ(j["config"]["qf1"], 60);
  EXPECT_EQ(j["config"]["qf2"], 95);
  EXPECT_EQ(j["data"]["train_pairs"], 11);
  EXPECT_EQ(j["data"]["val_pairs"], 1);
  for (const char* c : {"train_accuracy", "val_accuracy", "test_accuracy"}) {
    ASSERT_EQ(j["curves"][c].size(), 2u) << c;
    for (const auto& v : j["curves"][c]) {
      EXPECT_GE(v.get<double>(), 0.0);
      EXPECT_LE(v.get<double>(), 1.0);
    }
  }
  EXPECT_EQ(j["finite_checks"], 2 * j["data"]["batches_per_epoch"].get<int>());
  EXPECT_EQ(j["test"]["total"], 8);

  // same inputs, same bytes
  const auto ck1 = jpeg::read_file(ck), rep1 = jpeg::read_file(rep);
  ASSERT_EQ(jcnn_run(args).code, 0);
  EXPECT_EQ(jpeg::read_file(ck), ck1);
  EXPECT_EQ(jpeg::read_file(rep), rep1);

  const fs::path er = root() / "eval.json";
  const CliResult e = jcnn_run({"eval", "--ckpt", ck.string(), "--manifest", manifest().string(), "--report", er.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(std::regex_search(e.out, std::regex(R"(^test accuracy=[01]\.[0-9]{6} \([0-9]+/8\))")));
  const json ej = read_json(er);
  EXPECT_EQ(ej["schema"], "jcnn.eval-report/1");
  EXPECT_DOUBLE_EQ(ej["accuracy"].get<double>(), j["test"]["accuracy"].get<double>());

  const Manifest m = load_manifest(manifest());
  const fs::path img = manifest().parent_path() / m.front().file_path;
  const CliResult p = jcnn_run({"predict", "--ckpt", ck.string(), "--in", img.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(std::regex_match(p.out, std::regex("(single|double) p=0\\.[0-9]+\n")));
  EXPECT_NE(jcnn_run({"predict", "--ckpt", ck.string(), "--in", (root() / "nope.jpg").string()}).code, 0);
  EXPECT_EQ(jcnn_run({"predict", "--ckpt", img.string(), "--in", img.string()}).code, cli::kDataError);
}

TEST_F(Cli, ConstantClassifierEvaluatesToHalf) {
  NetworkConfig cfg;
  Network<float> net(cfg, 1);
  for (auto& v : net.fc2().weights.storage()) v = 0.0f;
  net.fc2().bias[0] = 1.0f;
  net.fc2().bias[1] = 0.0f;
  const fs::path ck = root() / "stub.ckpt";
  save_checkpoint(net, {}, ck);
  const CliResult r = jcnn_run({"eval", "--ckpt", ck.string(), "--manifest", manifest().string(), "--split", "test"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "test accuracy=0.500000 (4/8)\n");
}

TEST_F(Cli, MbfdfTrainAndEval) {
  const fs::path model = root() / "fld.json", rep = root() / "fld_eval.json", csv = root() / "f.csv";
  CliResult r = jcnn_run({"mbfdf", "train", "--manifest", manifest().string(), "--out-model", model.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(model)["schema"], "jcnn.fld-model/1");
  r = jcnn_run({"mbfdf", "eval", "--model", model.string(), "--manifest", manifest().string(), "--report",
                rep.string(), "--csv", csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = read_json(rep);
  EXPECT_EQ(j["method"], "mbfdf-fld");
  EXPECT_EQ(j["total"], 8);
  const auto bytes = jpeg::read_file(csv);
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}

TEST(CliExtract, DumpAndCsv) {
  TempDir dir("extract");
  const auto img = jcnn::testing::textured_image(256, 256, 2);
  jpeg::write_file(dir / "a.jpg", jpeg::encode_gray(img, 80));
  ASSERT_EQ(jcnn_run({"extract-dct", "--in", (dir / "a.jpg").string(), "--out", (dir / "a.bin").string()}).code, 0);
  const auto dump = jpeg::read_file(dir / "a.bin");
  ASSERT_GE(dump.size(), 16u);
  std::uint32_t hdr[4];
  std::memcpy(hdr, dump.data(), 16);
  EXPECT_EQ(hdr[0], 32u);
  EXPECT_EQ(hdr[1], 32u);
  EXPECT_EQ(hdr[2], 20u);
  EXPECT_EQ(dump.size(), 16u + 4u * 32 * 32 * 20);

  jpeg::write_file(dir / "flat.jpg", jpeg::encode_gray(jpeg::GrayImage(256, 256, 140), 90));
  ASSERT_EQ(jcnn_run({"extract-dct", "--in", (dir / "flat.jpg").string(), "--csv", (dir / "f.csv").string()}).code, 0);
  const auto bytes = jpeg::read_file(dir / "f.csv");
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("row,col,m1,m2,", 0), 0u);
  EXPECT_NE(line.find(",m20"), std::string::npos);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const auto third = line.find(',', line.find(',') + 1);
    EXPECT_EQ(line.substr(third), ",0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0");
  }
  EXPECT_EQ(rows, 1024u);
  EXPECT_EQ(jcnn_run({"extract-dct", "--in", (dir / "a.jpg").string()}).code, cli::kUsage);
  EXPECT_EQ(jcnn_run({"extract-dct", "--in", (dir / "missing.jpg").string(), "--csv", "x"}).code, cli::kDataError);
}

TEST(CliMatrix, AggregatesOffDiagonalCells) {
  TempDir dir("matrix");
  auto report = [&](int q1, int q2, double acc, const char* method = "jpegcnn") {
    const fs::path p = dir / ("r_" + std::to_string(q1) + "_" + std::to_string(q2) + "_" + method + ".json");
    write_text(p, json({{"schema", "jcnn.eval-report/1"}, {"method", method}, {"split", "test"}, {"qf1", q1},
                        {"qf2", q2}, {"accuracy", acc}})
                      .dump());
    return p.string();
  };
  const auto a = report(60, 95, 0.99), b = report(90, 95, 0.81), c = report(95, 60, 0.70);
  const fs::path out = dir / "m.json";
  const CliResult r = jcnn_run({"eval", "--matrix", a, b, c, "--out", out.string(), "--table"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(out);
  EXPECT_EQ(m["schema"], "jcnn.accuracy-matrix/1");
  for (std::size_t i = 0; i < 8; ++i) EXPECT_TRUE(m["cells"][i][i].is_null());
  EXPECT_DOUBLE_EQ(m["cells"][0][7].get<double>(), 0.99);
  EXPECT_DOUBLE_EQ(m["cells"][7][0].get<double>(), 0.70);
  EXPECT_NEAR(m["column_average"][7].get<double>(), 0.90, 1e-12);
  EXPECT_DOUBLE_EQ(m["column_average"][0].get<double>(), 0.70);
  EXPECT_TRUE(m["column_average"][3].is_null());
  EXPECT_NE(r.out.find("Averaged"), std::string::npos);
  EXPECT_NE(r.out.find("90.00"), std::string::npos);

  EXPECT_EQ(jcnn_run({"eval", "--matrix", report(70, 70, 0.5)}).code, cli::kDataError);
  EXPECT_EQ(jcnn_run({"eval", "--matrix", a, a}).code, cli::kDataError);
  EXPECT_EQ(jcnn_run({"eval", "--matrix", a, report(65, 60, 0.9, "mbfdf-fld")}).code, cli::kDataError);
}
