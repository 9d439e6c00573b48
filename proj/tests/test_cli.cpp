#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cpn/cptf.hpp"
#include "cpn/eval.hpp"
#include "cpn/image.hpp"
#include "doctest.h"

#ifndef CPN_TOOL_PATH
#error "CPN_TOOL_PATH must point at the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(CPN_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

std::vector<uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

fs::path work_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "cpn_cli_suite";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// One tiny dataset shared by every command test.
const fs::path& shared_dataset() {
  static fs::path dir = [] {
    fs::path d = work_root() / "data";
    REQUIRE(run("gen-data --out " + d.string() + " --n 6 --classes 3 --size 32 --seed 21") == 0);
    return d;
  }();
  return dir;
}

std::string micro_train_args() {
  return "--epochs 1 --batch 4 --lr0 0.05 --crop 32 --grid-k 4 --seed 7";
}

// One trained model shared by the inference/evaluation tests.
const fs::path& shared_model() {
  static fs::path dir = [] {
    fs::path m = work_root() / "model_a";
    REQUIRE(run("train --data " + shared_dataset().string() + " " + micro_train_args() +
                " --out " + m.string()) == 0);
    return m;
  }();
  return dir;
}

}  // namespace

TEST_CASE("bad invocations exit with the usage code") {
  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("train --out /tmp/x") == 2);        // missing required --data
  CHECK(run("train --data /nonexistent --out " + (work_root() / "nope").string()) != 0);
}

TEST_CASE("dataset generation is reproducible byte for byte") {
  fs::path a = work_root() / "gen_a";
  fs::path b = work_root() / "gen_b";
  REQUIRE(run("gen-data --out " + a.string() + " --n 4 --classes 3 --size 32 --seed 5") == 0);
  REQUIRE(run("gen-data --out " + b.string() + " --n 4 --classes 3 --size 32 --seed 5") == 0);
  for (const char* rel : {"images/0000.png", "images/0003.png", "masks/0002.png", "labels.tsv",
                          "manifest.txt"}) {
    CHECK(read_bytes(a / rel) == read_bytes(b / rel));
  }
  CHECK(fs::exists(a / "images" / "0003.png"));
  CHECK_FALSE(fs::exists(a / "images" / "0004.png"));
}

TEST_CASE("training runs end to end and reruns byte-identically") {
  fs::path data = shared_dataset();
  fs::path m1 = shared_model();
  fs::path m2 = work_root() / "model_b";
  std::string args = "train --data " + data.string() + " " + micro_train_args();
  REQUIRE(run(args + " --out " + m2.string()) == 0);

  CHECK(read_bytes(m1 / "train_log.tsv") == read_bytes(m2 / "train_log.tsv"));
  CHECK(read_bytes(m1 / "config.txt") == read_bytes(m2 / "config.txt"));
  // Every serialized weight matches bitwise.
  std::ifstream idx(m1 / "weights.idx");
  REQUIRE(idx.good());
  std::string line;
  int compared = 0;
  while (std::getline(idx, line)) {
    size_t tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string rel = line.substr(tab + 1);
    CHECK(read_bytes(m1 / rel) == read_bytes(m2 / rel));
    ++compared;
  }
  CHECK(compared > 0);
}

TEST_CASE("command flags override the config file") {
  fs::path data = shared_dataset();
  fs::path cfg = work_root() / "base.cfg";
  {
    std::ofstream f(cfg);
    f << "mode=baseline\nepochs=1\nbatch=4\nlr0=0.01\ncrop=32\ngrid_k=4\nseed=3\n";
  }
  fs::path out = work_root() / "model_override";
  REQUIRE(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
              out.string() + " --lr0 0.05 --seed 9") == 0);
  std::ifstream saved(out / "config.txt");
  std::string text((std::istreambuf_iterator<char>(saved)), {});
  CHECK(text.find("lr0=0.05") != std::string::npos);   // flag wins
  CHECK(text.find("seed=9") != std::string::npos);     // flag wins
  CHECK(text.find("mode=baseline") != std::string::npos);  // file survives
}

TEST_CASE("the plain-classifier mode logs zero pair losses") {
  fs::path data = shared_dataset();
  fs::path out = work_root() / "model_baseline";
  REQUIRE(run("train --data " + data.string() + " --out " + out.string() + " --mode baseline " +
              micro_train_args()) == 0);
  std::ifstream log(out / "train_log.tsv");
  REQUIRE(log.good());
  std::string header;
  std::getline(log, header);
  CHECK(header == "step\tl_cls\tl_tcp\tl_cpcr\tl_total\tlr");
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) {
    // Columns: step, l_cls, l_tcp, l_cpcr, l_total, lr.
    std::istringstream is(line);
    std::string step, l_cls, l_tcp, l_cpcr;
    is >> step >> l_cls >> l_tcp >> l_cpcr;
    CHECK(l_tcp == "0");
    CHECK(l_cpcr == "0");
    ++rows;
  }
  CHECK(rows == 2);  // ceil(6/4) steps, 1 epoch
}

TEST_CASE("inference artifacts are mutually consistent") {
  fs::path data = shared_dataset();
  fs::path model = shared_model();
  REQUIRE(fs::exists(model / "weights.idx"));
  fs::path out = work_root() / "infer";
  REQUIRE(run("infer-cam --model " + model.string() + " --image " +
              (data / "images" / "0000.png").string() + " --labels 1,1,1 --beta 0.3 --out " +
              out.string()) == 0);
  REQUIRE(fs::exists(out / "mask.png"));
  REQUIRE(fs::exists(out / "stack.cptf"));
  REQUIRE(fs::exists(out / "cam_class_0.png"));
  REQUIRE(fs::exists(out / "cam_class_3.png"));

  // The written mask decodes from the written stack at the same threshold.
  cpn::Tensor<float> stack = cpn::load_cptf<float>((out / "stack.cptf").string());
  REQUIRE(stack.shape() == cpn::Shape{4, 32, 32});
  std::vector<float> fg(stack.data().begin() + 32 * 32, stack.data().end());
  cpn::Mask expect = cpn::cam_to_mask(
      cpn::Tensor<float>::from_data({3, 32, 32}, std::move(fg)), 0.3f);
  cpn::Mask written = cpn::load_mask((out / "mask.png").string());
  CHECK(written.ids == expect.ids);
}

TEST_CASE("evaluation writes the report where it is told") {
  fs::path data = shared_dataset();
  fs::path model = shared_model();
  fs::path report = work_root() / "scores.tsv";
  REQUIRE(run("eval-miou --model " + model.string() + " --data " + data.string() +
              " --scales 1.0 --report " + report.string()) == 0);
  std::ifstream f(report);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  CHECK(text.find("class\tiou") == 0);
  CHECK(text.find("fg_miou\t") != std::string::npos);
  CHECK(text.find("beta\t") != std::string::npos);
}

TEST_CASE("the partition demo renders all three views") {
  fs::path data = shared_dataset();
  fs::path out = work_root() / "demo";
  REQUIRE(run("patch-demo --image " + (data / "images" / "0001.png").string() +
              " --grid-side 8 --p-h 0.5 --seed 4 --out " + out.string()) == 0);
  for (const char* leaf : {"partition.png", "image_h.png", "image_hbar.png"}) {
    CHECK(fs::exists(out / leaf));
  }
  // The two hidden views differ from each other.
  CHECK(read_bytes(out / "image_h.png") != read_bytes(out / "image_hbar.png"));
}

TEST_CASE("the bound checker and gradient checker report success") {
  CHECK(run("check-inequality --n 4 --draws 2 --seed 3") == 0);
  CHECK(run("gradcheck --seed 1 --points 3") == 0);
}
