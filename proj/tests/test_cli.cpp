#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "sfl/treebank.hpp"

namespace fs = std::filesystem;
using namespace sfl;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output; // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string log = "/tmp/sfl_cli_out_" + std::to_string(counter++);
  const std::string cmd = std::string(SFL_CLI_PATH) + " " + args + " > " +
                          log + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kBase = "/tmp/sfl_cli_suite";

// Small model flags shared by the training runs in this suite.
const std::string kTinyFlags =
    " --layers 1 --gnn-layers 1 --heads 2 --d-model 16 --d-ff 64 --epochs 2";

struct Fixture {
  Fixture() {
    static bool done = false;
    if (done) return;
    done = true;
    fs::remove_all(kBase);
    fs::create_directories(kBase);
    auto synth = run_cli("synth --out " + kBase +
                         "/data --train 120 --dev 30 --test 40 "
                         "--vocab-size 12 --classes 4 --len-min 4 "
                         "--len-max 7 --seed 3");
    REQUIRE(synth.exit_code == 0);
    auto train = run_cli("train --task tag --variant late --data " + kBase +
                         "/data/train.jsonl --dev " + kBase +
                         "/data/dev.jsonl --vocab " + kBase +
                         "/data/vocab.txt --out " + kBase + "/late --seed 7" +
                         kTinyFlags);
    REQUIRE(train.exit_code == 0);
  }
};

} // namespace

TEST_CASE("train writes checkpoint, metrics, and config echo") {
  Fixture fixture;
  CHECK(fs::exists(kBase + "/late/checkpoint.bin"));
  CHECK(fs::exists(kBase + "/late/metrics.csv"));
  CHECK(fs::exists(kBase + "/late/config.echo"));
}

TEST_CASE("missing --data is a config error naming the flag") {
  auto r = run_cli("train --task tag --variant late --vocab x --out /tmp/x");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("data") != std::string::npos);
}

TEST_CASE("unknown variant is a config error") {
  Fixture fixture;
  auto r = run_cli("train --task tag --variant weird --data " + kBase +
                   "/data/train.jsonl --vocab " + kBase +
                   "/data/vocab.txt --out " + kBase + "/weird" + kTinyFlags);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("variant") != std::string::npos);
}

TEST_CASE("training twice with the same flags is byte-identical") {
  Fixture fixture;
  auto r1 = run_cli("train --task tag --variant late --data " + kBase +
                    "/data/train.jsonl --dev " + kBase + "/data/dev.jsonl" +
                    " --vocab " + kBase + "/data/vocab.txt --out " + kBase +
                    "/det1 --seed 21" + kTinyFlags);
  auto r2 = run_cli("train --task tag --variant late --data " + kBase +
                    "/data/train.jsonl --dev " + kBase + "/data/dev.jsonl" +
                    " --vocab " + kBase + "/data/vocab.txt --out " + kBase +
                    "/det2 --seed 21" + kTinyFlags);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(kBase + "/det1/metrics.csv") ==
        read_file(kBase + "/det2/metrics.csv"));
  CHECK(read_file(kBase + "/det1/checkpoint.bin") ==
        read_file(kBase + "/det2/checkpoint.bin"));
}

TEST_CASE("eval right after train reproduces the best dev F1") {
  Fixture fixture;
  auto r = run_cli("eval --checkpoint " + kBase +
                   "/late/checkpoint.bin --data " + kBase +
                   "/data/dev.jsonl --vocab " + kBase +
                   "/data/vocab.txt --out " + kBase + "/eval_dev --seed 7");
  REQUIRE(r.exit_code == 0);
  // Parse "P=... R=... F1=..." and compare to the best row of metrics.csv.
  const auto f1_pos = r.output.find("F1=");
  REQUIRE(f1_pos != std::string::npos);
  const double eval_f1 = std::stod(r.output.substr(f1_pos + 3));

  std::ifstream metrics(kBase + "/late/metrics.csv");
  std::string line;
  std::getline(metrics, line); // header
  double best_f1 = -1.0;
  while (std::getline(metrics, line)) {
    if (line.empty()) continue;
    if (line.back() == '1') { // best column
      std::stringstream ss(line);
      std::string field;
      for (int i = 0; i < 5; ++i) std::getline(ss, field, ',');
      best_f1 = std::stod(field);
    }
  }
  REQUIRE(best_f1 >= 0.0);
  CHECK(eval_f1 == doctest::Approx(best_f1).epsilon(5e-5));
}

TEST_CASE("corrupted trees degrade a fusion model, never help it") {
  Fixture fixture;
  auto gold = run_cli("eval --checkpoint " + kBase +
                      "/late/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --out " + kBase + "/eval_gold");
  auto noisy = run_cli("eval --checkpoint " + kBase +
                       "/late/checkpoint.bin --data " + kBase +
                       "/data/test.jsonl --vocab " + kBase +
                       "/data/vocab.txt --trees corrupted@0.5 --out " + kBase +
                       "/eval_noisy --seed 4");
  REQUIRE(gold.exit_code == 0);
  REQUIRE(noisy.exit_code == 0);
  const double f1_gold = std::stod(gold.output.substr(gold.output.find("F1=") + 3));
  const double f1_noisy =
      std::stod(noisy.output.substr(noisy.output.find("F1=") + 3));
  CHECK(f1_noisy <= f1_gold);
}

TEST_CASE("the baseline is invariant to any --trees flag") {
  Fixture fixture;
  auto train = run_cli("train --task tag --variant baseline --data " + kBase +
                       "/data/train.jsonl --dev " + kBase + "/data/dev.jsonl" +
                       " --vocab " + kBase + "/data/vocab.txt --out " + kBase +
                       "/base --seed 9" + kTinyFlags);
  REQUIRE(train.exit_code == 0);
  auto gold = run_cli("eval --checkpoint " + kBase +
                      "/base/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --out " + kBase + "/base_gold");
  auto noisy = run_cli("eval --checkpoint " + kBase +
                       "/base/checkpoint.bin --data " + kBase +
                       "/data/test.jsonl --vocab " + kBase +
                       "/data/vocab.txt --trees corrupted@0.9 --out " + kBase +
                       "/base_noisy --seed 5");
  REQUIRE(gold.exit_code == 0);
  REQUIRE(noisy.exit_code == 0);
  CHECK(read_file(kBase + "/base_gold/metrics.csv") ==
        read_file(kBase + "/base_noisy/metrics.csv"));
}

TEST_CASE("perturb") {
  Fixture fixture;
  SUBCASE("rate 0 keeps every head and reports UAS 1") {
    auto r = run_cli("perturb --data " + kBase +
                     "/data/test.jsonl --rate 0 --seed 2 --out " + kBase +
                     "/pert0");
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("1.0000") != std::string::npos);
    Vocab vocab = Vocab::from_pieces({});
    auto original = load_dataset(kBase + "/data/test.jsonl", vocab);
    auto perturbed = load_dataset(kBase + "/pert0/perturbed.jsonl", vocab);
    REQUIRE(original.size() == perturbed.size());
    for (size_t i = 0; i < original.size(); ++i) {
      CHECK(original[i].tree.heads == perturbed[i].tree.heads);
    }
  }
  SUBCASE("perturbed output re-validates and mean UAS drops") {
    auto r = run_cli("perturb --data " + kBase +
                     "/data/test.jsonl --rate 0.4 --seed 2 --out " + kBase +
                     "/pert4");
    REQUIRE(r.exit_code == 0);
    Vocab vocab = Vocab::from_pieces({});
    auto perturbed = load_dataset(kBase + "/pert4/perturbed.jsonl", vocab);
    for (const auto& s : perturbed) s.tree.validate();
    const double mean_uas = std::stod(r.output.substr(
        r.output.find("original:") + 9));
    CHECK(mean_uas < 1.0);
    CHECK(mean_uas > 0.3);
  }
  SUBCASE("invalid rate is a config error") {
    auto r = run_cli("perturb --data " + kBase +
                     "/data/test.jsonl --rate 1.5 --seed 2 --out " + kBase +
                     "/pertbad");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("rate") != std::string::npos);
  }
}

TEST_CASE("gradcheck") {
  SUBCASE("fresh build passes and lists every layer exactly once") {
    auto r = run_cli("gradcheck --seeds 2");
    CHECK(r.exit_code == 0);
    const std::vector<std::string> layers = {
        "matmul", "masked_softmax", "layer_norm", "gelu", "encoder_layer",
        "gnn_layer", "gate", "joint_kv", "crf", "late_model", "joint_model"};
    for (const auto& layer : layers) {
      const std::string needle = " " + layer + " ";
      size_t first = r.output.find(needle);
      CHECK(first != std::string::npos);
      CHECK(r.output.find(needle, first + 1) == std::string::npos);
    }
  }
  SUBCASE("an injected sign error in the gelu backward is caught") {
    auto r = run_cli("gradcheck --seeds 2 --defect gelu");
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("failed in layer: gelu") != std::string::npos);
  }
}

TEST_CASE("sensitivity") {
  Fixture fixture;
  SUBCASE("rate grid {0} yields flagged undefined slopes") {
    auto r = run_cli("sensitivity --checkpoint " + kBase +
                     "/late/checkpoint.bin --checkpoint-noisy " + kBase +
                     "/late/checkpoint.bin --data " + kBase +
                     "/data/test.jsonl --vocab " + kBase +
                     "/data/vocab.txt --rates 0 --seed 3 --out " + kBase +
                     "/sens0");
    REQUIRE(r.exit_code == 0);
    const std::string fits = read_file(kBase + "/sens0/sensitivity.csv");
    CHECK(fits.find("degenerate") != std::string::npos);
    CHECK(r.output.find("undefined") != std::string::npos);
  }
  SUBCASE("csv columns match the pinned headers") {
    auto r = run_cli("sensitivity --checkpoint " + kBase +
                     "/late/checkpoint.bin --checkpoint-noisy " + kBase +
                     "/late/checkpoint.bin --data " + kBase +
                     "/data/test.jsonl --vocab " + kBase +
                     "/data/vocab.txt --rates 0.2,0.4 --seed 3 --out " +
                     kBase + "/sens1");
    REQUIRE(r.exit_code == 0);
    std::ifstream metrics(kBase + "/sens1/metrics.csv");
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "condition,rate,sentence_id,uas,f1_ref,f1_noisy,delta");
    std::ifstream fits(kBase + "/sens1/sensitivity.csv");
    std::getline(fits, header);
    CHECK(header == "condition,rate,slope,intercept,n,flag");
  }
  SUBCASE("rerunning with the same seed is byte-identical") {
    auto r1 = run_cli("sensitivity --checkpoint " + kBase +
                      "/late/checkpoint.bin --checkpoint-noisy " + kBase +
                      "/late/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --rates 0.3 --seed 5 --out " + kBase +
                      "/sensA");
    auto r2 = run_cli("sensitivity --checkpoint " + kBase +
                      "/late/checkpoint.bin --checkpoint-noisy " + kBase +
                      "/late/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --rates 0.3 --seed 5 --out " + kBase +
                      "/sensB");
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    CHECK(read_file(kBase + "/sensA/metrics.csv") ==
          read_file(kBase + "/sensB/metrics.csv"));
    CHECK(read_file(kBase + "/sensA/sensitivity.csv") ==
          read_file(kBase + "/sensB/sensitivity.csv"));
  }
  SUBCASE("incompatible checkpoints exit with the compatibility code") {
    auto synth = run_cli("synth --out " + kBase +
                         "/data2 --train 40 --dev 10 --test 10 "
                         "--vocab-size 20 --classes 4 --len-min 4 "
                         "--len-max 6 --seed 8");
    REQUIRE(synth.exit_code == 0);
    auto train = run_cli("train --task tag --variant late --data " + kBase +
                         "/data2/train.jsonl --dev " + kBase +
                         "/data2/dev.jsonl --vocab " + kBase +
                         "/data2/vocab.txt --out " + kBase +
                         "/late2 --seed 4 --epochs 1" +
                         " --layers 1 --gnn-layers 1 --heads 2 --d-model 16"
                         " --d-ff 64");
    REQUIRE(train.exit_code == 0);
    auto r = run_cli("sensitivity --checkpoint " + kBase +
                     "/late/checkpoint.bin --checkpoint-noisy " + kBase +
                     "/late2/checkpoint.bin --data " + kBase +
                     "/data/test.jsonl --vocab " + kBase +
                     "/data/vocab.txt --rates 0.2 --seed 3 --out " + kBase +
                     "/sens_bad");
    CHECK(r.exit_code == 3);
  }
}

TEST_CASE("--trees file: substitutes trees from another dataset") {
  Fixture fixture;
  // Feeding the dataset's own file back must reproduce the gold-tree eval.
  auto gold = run_cli("eval --checkpoint " + kBase +
                      "/late/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --out " + kBase + "/tf_gold");
  auto file = run_cli("eval --checkpoint " + kBase +
                      "/late/checkpoint.bin --data " + kBase +
                      "/data/test.jsonl --vocab " + kBase +
                      "/data/vocab.txt --trees file:" + kBase +
                      "/data/test.jsonl --out " + kBase + "/tf_file");
  REQUIRE(gold.exit_code == 0);
  REQUIRE(file.exit_code == 0);
  CHECK(read_file(kBase + "/tf_gold/metrics.csv") ==
        read_file(kBase + "/tf_file/metrics.csv"));

  // Record-count mismatch is a compatibility error.
  auto bad = run_cli("eval --checkpoint " + kBase +
                     "/late/checkpoint.bin --data " + kBase +
                     "/data/test.jsonl --vocab " + kBase +
                     "/data/vocab.txt --trees file:" + kBase +
                     "/data/dev.jsonl --out " + kBase + "/tf_bad");
  CHECK(bad.exit_code == 3);
}

TEST_CASE("eval with a mismatched dataset head exits with code 3") {
  Fixture fixture;
  // Build a relation-payload dataset with the same vocabulary.
  const std::string re_path = kBase + "/re.jsonl";
  {
    std::ofstream out(re_path);
    out << R"({"tokens":["w000","w001","w002"],"heads":[0,1,1],)"
        << R"("deprels":["root","dep","dep"],"subj":[0,1],"obj":[2,3],)"
        << R"("relation":"no_relation"})"
        << "\n";
  }
  auto r = run_cli("eval --checkpoint " + kBase +
                   "/late/checkpoint.bin --data " + re_path + " --vocab " +
                   kBase + "/data/vocab.txt --out " + kBase + "/eval_mismatch");
  CHECK(r.exit_code == 3);
}
