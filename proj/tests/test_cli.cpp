#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sfafnet/cli.hpp"

using namespace sfafnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> v;
  for (std::string s; std::getline(in, s);) v.push_back(s);
  return v;
}

// Runs the built executable with stderr captured in err_file.
int run_binary(const std::string& args, const fs::path& err_file) {
  const std::string cmd = std::string(SFAFNET_CLI_PATH) + " " + args + " > /dev/null 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::vector<std::string> kTiny = {"--channels", "4", "--naf-blocks", "1", "--rows", "2", "--steps", "3",
                                        "--batch", "2", "--patch", "16", "--seed", "1"};

std::vector<std::string> train_args(const fs::path& data, const fs::path& out) {
  std::vector<std::string> a = {"train", "--data", data.string(), "--out", out.string()};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  return a;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("sfafnet_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path corpus(Index count = 4) {
    const auto d = dir / "corpus";
    EXPECT_EQ(cli({"synth-data", "--out", d.string(), "--count", std::to_string(count), "--size", "32"}).code, 0);
    return d;
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  auto r = cli({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("synth-data"), std::string::npos);

  r = cli({"synth-data", "--out", dir.string(), "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("--count"), std::string::npos) << "usage text expected on stderr";

  EXPECT_EQ(cli({"synth-data", "--out", dir.string(), "--count", "many"}).code, 1);
  EXPECT_EQ(cli({"synth-data", "--out", dir.string(), "--count", "0"}).code, 1);
  EXPECT_EQ(cli({"synth-data", "--out", dir.string(), "--count", "4", "--split", "4"}).code, 1);
  EXPECT_EQ(cli({"verify-theorem", "--k", "0"}).code, 1);
  EXPECT_EQ(cli({"nonsense"}).code, 1);

  const auto data = corpus();
  auto bad = train_args(data, dir / "m.ckpt");
  bad.insert(bad.end(), {"--filter", "box"});
  r = cli(bad);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--filter"), std::string::npos);
  bad = train_args(data, dir / "m.ckpt");
  bad.insert(bad.end(), {"--channels", "6"});
  EXPECT_EQ(cli(bad).code, 1);
}

TEST_F(Cli, HelpExitsZero) {
  auto r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("dump-features"), std::string::npos);
  r = cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--naf-blocks"), std::string::npos);
}

TEST_F(Cli, MissingFilesExitTwoWithPath) {
  const auto ghost = (dir / "ghost.ckpt").string();
  auto r = cli({"infer", "--ckpt", ghost, "--in", "x.ppm", "--out", (dir / "y.ppm").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(ghost), std::string::npos) << r.err;

  const auto nowhere = (dir / "nowhere").string();
  r = cli(train_args(nowhere, dir / "m.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(nowhere), std::string::npos) << r.err;
}

TEST_F(Cli, BinaryReportsExitCodes) {
  const auto err = dir / "stderr.txt";
  EXPECT_EQ(run_binary("", err), 1);
  EXPECT_EQ(run_binary("synth-data --out " + (dir / "c").string() + " --unknown-flag", err), 1);
  EXPECT_NE(slurp(err).find("--unknown-flag"), std::string::npos);
  const auto ghost = (dir / "ghost.ckpt").string();
  EXPECT_EQ(run_binary("eval --ckpt " + ghost + " --data " + dir.string() + " --csv " + (dir / "e.csv").string(), err),
            2);
  EXPECT_NE(slurp(err).find(ghost), std::string::npos);
  EXPECT_EQ(run_binary("verify-theorem --k 3 --trials 2 --max-p 64 --csv " + (dir / "t.csv").string(), err), 0);
  EXPECT_EQ(lines(dir / "t.csv").size(), 3u);
}

TEST_F(Cli, SynthDataWritesCorpusAndSplit) {
  const auto flat = corpus(5);
  EXPECT_EQ(load_corpus(flat.string()).size(), 5u);
  const auto split = dir / "split";
  ASSERT_EQ(cli({"synth-data", "--out", split.string(), "--count", "5", "--size", "32", "--split", "3"}).code, 0);
  const auto train = load_corpus((split / "train").string()), test = load_corpus((split / "test").string());
  ASSERT_EQ(train.size(), 3u);
  ASSERT_EQ(test.size(), 2u);
  // The split is a partition of the same seeded corpus.
  const auto all = load_corpus(flat.string());
  EXPECT_EQ(train[0].sharp.pixels, all[0].sharp.pixels);
  EXPECT_EQ(test[0].sharp.pixels, all[3].sharp.pixels);
  EXPECT_EQ(test[1].degraded.pixels, all[4].degraded.pixels);

  const auto motion = dir / "motion";
  ASSERT_EQ(cli({"synth-data", "--out", motion.string(), "--count", "2", "--size", "16", "--motion-length", "5",
                 "--motion-angle", "30", "--noise", "0.01", "--seed", "9"})
                .code,
            0);
  EXPECT_EQ(load_corpus(motion.string())[0].degraded.width, 16);
}

TEST_F(Cli, TrainIsDeterministicAndResumable) {
  const auto data = corpus();
  const auto a = dir / "a.ckpt", b = dir / "b.ckpt";
  ASSERT_EQ(cli(train_args(data, a)).code, 0);
  ASSERT_EQ(cli(train_args(data, b)).code, 0);
  EXPECT_TRUE(slurp(a) == slurp(b));

  const auto log = lines(fs::path(a.string() + ".log.csv"));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].rfind("step,", 0), 0u) << log[0];

  // Interrupt a 6-step run after 3 steps, then finish it through --resume.
  auto six = train_args(data, dir / "six.ckpt");
  six[std::find(six.begin(), six.end(), "--steps") - six.begin() + 1] = "6";
  ASSERT_EQ(cli(six).code, 0);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.patch_size = 16;
  tc.total_steps = 6;
  tc.seed = 1;
  Trainer<float> half(SFAFNet<float>::make(ArchConfig{4, 1, 2, 3, std::nullopt}, 1), load_corpus(data.string()), tc);
  for (int i = 0; i < 3; ++i) half.step();
  half.save((dir / "half.ckpt").string());
  auto resumed = six;
  resumed[4] = (dir / "resumed.ckpt").string();
  resumed.insert(resumed.end(), {"--resume", (dir / "half.ckpt").string()});
  auto r = cli(resumed);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(slurp(dir / "six.ckpt") == slurp(dir / "resumed.ckpt"));

  auto gaussian = train_args(data, dir / "g.ckpt");
  gaussian.insert(gaussian.end(), {"--filter", "gaussian:1.2", "--val", data.string(), "--val-every", "2",
                                   "--clip-grad-norm", "0.5"});
  r = cli(gaussian);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("validation PSNR"), std::string::npos);
  EXPECT_TRUE(SFAFNet<float>::load((dir / "g.ckpt").string()).config.gaussian_sigma.has_value());
}

TEST_F(Cli, InferWithZeroHeadsIsIdentity) {
  const auto model = SFAFNet<float>::make(ArchConfig{4, 1, 2, 3, std::nullopt}, 2);
  model.zero_heads();
  const auto ckpt = dir / "zero.ckpt";
  model.save(ckpt.string());

  Rng rng(4);
  Image img(3, 21, 18);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
  write_image((dir / "in.ppm").string(), img);
  ASSERT_EQ(cli({"infer", "--ckpt", ckpt.string(), "--in", (dir / "in.ppm").string(), "--out",
                 (dir / "out.ppm").string()})
                .code,
            0);
  EXPECT_TRUE(slurp(dir / "in.ppm") == slurp(dir / "out.ppm"));
}

TEST_F(Cli, EvalWritesPerImageCsv) {
  const auto data = corpus(3);
  const auto ckpt = dir / "m.ckpt";
  ASSERT_EQ(cli(train_args(data, ckpt)).code, 0);
  auto r = cli({"eval", "--ckpt", ckpt.string(), "--data", data.string(), "--csv", (dir / "e.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PSNR"), std::string::npos);
  const auto rows = lines(dir / "e.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "image_id,psnr,ssim,mae");
  EXPECT_EQ(rows[1].rfind("0000,", 0), 0u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string id, psnr_s, ssim_s, mae_s;
    std::getline(ss, id, ',');
    std::getline(ss, psnr_s, ',');
    std::getline(ss, ssim_s, ',');
    std::getline(ss, mae_s, ',');
    EXPECT_GT(std::stod(psnr_s), 0.0);
    EXPECT_LE(std::stod(ssim_s), 1.0);
    EXPECT_GE(std::stod(mae_s), 0.0);
  }
}

TEST_F(Cli, VerifyTheoremCsv) {
  const auto csv = dir / "theorem.csv";
  auto r = cli({"verify-theorem", "--k", "3", "--trials", "5", "--max-p", "64", "--csv", csv.string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("5/5"), std::string::npos) << r.out;
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "trial,p,ratio");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].rfind(std::to_string(i - 1) + ",64,", 0), 0u) << rows[i];
    EXPECT_LT(std::stod(rows[i].substr(rows[i].rfind(',') + 1)), 1e-3) << rows[i];
  }

  ASSERT_EQ(cli({"verify-theorem", "--k", "2", "--trials", "2", "--max-p", "8", "--csv", csv.string(), "--trajectory"})
                .code,
            0);
  EXPECT_EQ(lines(csv).size(), 17u);
}

TEST_F(Cli, GradcheckModule) {
  auto r = cli({"gradcheck", "--module", "conv2d"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  r = cli({"gradcheck", "--module", "softmax", "--seed", "7"});
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST_F(Cli, DumpFeaturesWritesBinAndJson) {
  const auto model = SFAFNet<float>::make(ArchConfig{4, 1, 2, 3, std::nullopt}, 3);
  const auto ckpt = dir / "m.ckpt";
  model.save(ckpt.string());
  Image img(3, 16, 16, 0.25f);
  for (Index x = 0; x < 16; ++x) img.at(1, 5, x) = 0.9f;
  write_image((dir / "in.ppm").string(), img);

  const auto out = dir / "features";
  auto r = cli({"dump-features", "--ckpt", ckpt.string(), "--in", (dir / "in.ppm").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;

  std::size_t bins = 0;
  bool saw_low_kernels = false;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() != ".bin") continue;
    ++bins;
    const auto meta = nlohmann::json::parse(slurp(fs::path(e.path()).replace_extension(".json")));
    EXPECT_EQ(meta["dtype"], "float32");
    EXPECT_EQ(meta["name"], e.path().stem().string());
    Index numel = 1;
    for (const auto& d : meta["shape"]) numel *= d.get<Index>();
    EXPECT_EQ(static_cast<Index>(fs::file_size(e.path())), 4 * numel) << e.path();
    if (e.path().stem().string().find("low_kernels") != std::string::npos) saw_low_kernels = true;
  }
  EXPECT_GT(bins, 0u);
  EXPECT_TRUE(saw_low_kernels);

  Image odd(3, 18, 16, 0.5f);
  write_image((dir / "odd.ppm").string(), odd);
  EXPECT_EQ(cli({"dump-features", "--ckpt", ckpt.string(), "--in", (dir / "odd.ppm").string(), "--out", out.string()})
                .code,
            2);
}
