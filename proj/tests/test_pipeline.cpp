// tests/test_pipeline.cpp
//
// Copyright 2026  The pmsspeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pmsspeech/pipeline.hpp"
#include "pmsspeech/wer.hpp"

namespace fs = std::filesystem;
using namespace pms;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Config small enough for a unit-test end-to-end pass.
ExperimentConfig tiny_experiment(const std::string& corpus, const std::string& out) {
  ExperimentConfig cfg = default_toy_config(corpus, out);
  cfg.model.num_layers = 2;
  cfg.model.window_schedule = {4, 8};
  cfg.model.supervised_layers = {1, 2};
  cfg.model.codebook_sizes = {12, 16};
  cfg.cluster1_k = 24;
  cfg.cluster1_max_iters = 15;
  cfg.cluster2_sizes = {12, 16};
  cfg.cluster2_subsample = 0.25;
  cfg.cluster2_max_iters = 15;
  cfg.extract_layer = 1;
  cfg.pretrain1.steps = 8;
  cfg.pretrain2.steps = 8;
  cfg.finetune.steps = 12;
  cfg.beam_width = 4;
  validate_experiment_config(cfg);
  return cfg;
}

}  // namespace

TEST_CASE("experiment config round-trips through the INI format") {
  ExperimentConfig cfg = default_toy_config("corpus", "runs/x");
  const std::string canonical = serialize_experiment_config(cfg);
  ExperimentConfig back = parse_experiment_config(parse_ini(canonical));
  CHECK(serialize_experiment_config(back) == canonical);
  CHECK(config_hash_hex(back) == config_hash_hex(cfg));

  ExperimentConfig annotated = parse_experiment_config(parse_ini(annotated_config_text(cfg)));
  CHECK(serialize_experiment_config(annotated) == canonical);
}

TEST_CASE("config validation rejects bad combinations") {
  ExperimentConfig cfg = default_toy_config("corpus", "runs/x");

  ExperimentConfig bad = cfg;
  bad.model.codebook_sizes = {50, 75};  // 75 is never clustered in [cluster2]
  CHECK_THROWS_AS(validate_experiment_config(bad), ValidationError);

  bad = cfg;
  bad.extract_layer = 9;
  CHECK_THROWS_AS(validate_experiment_config(bad), ValidationError);

  bad = cfg;
  bad.model.codebook_sizes = {100, 50};  // decreasing granularity with depth
  CHECK_THROWS_AS(validate_experiment_config(bad), ValidationError);

  bad = cfg;
  bad.freeze_policy = "nonsense";
  CHECK_THROWS_AS(validate_experiment_config(bad), ValidationError);

  CHECK_THROWS_AS(parse_experiment_config(parse_ini("[model]\nbogus_key = 3\n")),
                  ValidationError);
}

TEST_CASE("toy corpus generation is deterministic and well-formed") {
  TempDir a("pms_toy_a"), b("pms_toy_b");
  ToyCorpusSpec spec;
  spec.num_unlabeled = 4;
  spec.num_labeled = 2;
  spec.seed = 9;
  gen_toy_corpus(a.str(), spec);
  gen_toy_corpus(b.str(), spec);

  const auto utts = scan_corpus(a.str() + "/unlabeled");
  REQUIRE(utts.size() == 4);
  CHECK(utts.front().id == "unlab_000");
  for (const Utterance& u : utts) {
    const Waveform w = read_audio(u.path);
    CHECK(w.sample_rate == 16000);
    CHECK(w.samples.size() >= 16000);  // at least 5 symbols of 0.2 s
    CHECK(w.samples.cwiseAbs().maxCoeff() <= 1.0);
  }
  const auto transcripts = read_transcripts(a.str() + "/labeled/transcripts.tsv");
  REQUIRE(transcripts.size() == 2);
  for (const auto& [id, text] : transcripts)
    for (const std::string& tok : split_tokens(text)) {
      CHECK(tok.size() == 1);
      CHECK(tok[0] >= 'a');
      CHECK(tok[0] <= 'f');
    }

  for (const char* rel : {"/unlabeled/unlab_000.wav", "/labeled/lab_001.wav",
                          "/labeled/transcripts.tsv"})
    CHECK(file_bytes(a.str() + rel) == file_bytes(b.str() + rel));
}

TEST_CASE("label resampling maps proportionally") {
  // 100 Hz MFCC labels onto 50 Hz encoder frames: every other label.
  const std::vector<int> src{0, 0, 1, 1, 2, 2, 3, 3};
  CHECK(resample_labels(src, 4) == std::vector<int>{0, 1, 2, 3});
  // Equal lengths pass through.
  CHECK(resample_labels({5, 6, 7}, 3) == std::vector<int>{5, 6, 7});
  // Expansion repeats.
  CHECK(resample_labels({1, 2}, 4) == std::vector<int>{1, 1, 2, 2});
}

TEST_CASE("duration batching respects the cap and keeps order") {
  const std::vector<double> seconds{3.0, 3.0, 3.0, 9.0, 1.0, 1.0};
  const auto batches = batch_by_duration(seconds, 6.0);
  REQUIRE(batches.size() == 4);
  CHECK(batches[0] == std::vector<std::size_t>{0, 1});
  CHECK(batches[1] == std::vector<std::size_t>{2});  // 3 + 9 would exceed the cap
  CHECK(batches[2] == std::vector<std::size_t>{3});  // oversize utt rides alone
  CHECK(batches[3] == std::vector<std::size_t>{4, 5});
}

TEST_CASE("manifest records stages and honors artifact existence") {
  TempDir dir("pms_manifest");
  const std::string artifact = dir.str() + "/artifact.bin";
  {
    std::ofstream(artifact) << "x";
  }
  RunManifest m = RunManifest::load_or_create(dir.str() + "/manifest.json", "hash1", 7);
  CHECK(!m.stage_done("stage_a"));
  m.record_done("stage_a", {artifact});
  m.save();

  RunManifest back = RunManifest::load_or_create(dir.str() + "/manifest.json", "hash1", 7);
  CHECK(back.stage_done("stage_a"));
  fs::remove(artifact);
  CHECK(!back.stage_done("stage_a"));  // artifacts must still exist

  RunManifest other = RunManifest::load_or_create(dir.str() + "/manifest.json", "hash2", 7);
  CHECK(!other.stage_done("stage_a"));  // different config hash
}

TEST_CASE("pipeline validation fires before any compute") {
  TempDir corpus("pms_e2e_corpus_bad"), out("pms_e2e_out_bad");
  ToyCorpusSpec spec;
  spec.num_unlabeled = 3;
  spec.num_labeled = 2;
  gen_toy_corpus(corpus.str(), spec);

  // Empty unlabeled corpus.
  ExperimentConfig cfg = tiny_experiment(corpus.str(), out.str());
  cfg.unlabeled_dir = corpus.str() + "/labeled";  // swap in something empty later
  fs::create_directories(corpus.path / "empty");
  cfg.unlabeled_dir = (corpus.path / "empty").string();
  Pipeline empty_pipeline(cfg);
  CHECK_THROWS_AS(empty_pipeline.run_all(), ValidationError);

  // Missing transcript entry.
  ExperimentConfig cfg2 = tiny_experiment(corpus.str(), out.str());
  {
    std::ofstream t(corpus.str() + "/labeled/transcripts.tsv");
    t << "lab_000\ta b\n";  // lab_001 missing
  }
  Pipeline missing(cfg2);
  CHECK_THROWS_AS(missing.run_all(), ValidationError);
}

TEST_CASE("tiny end-to-end run produces artifacts and skips on rerun") {
  TempDir corpus("pms_e2e_corpus"), out("pms_e2e_out");
  ToyCorpusSpec spec;
  spec.num_unlabeled = 6;
  spec.num_labeled = 3;
  spec.min_length = 4;
  spec.max_length = 6;
  spec.seed = 11;
  gen_toy_corpus(corpus.str(), spec);

  ExperimentConfig cfg = tiny_experiment(corpus.str(), out.str());
  Pipeline pipeline(cfg);
  pipeline.run_all();

  CHECK(fs::exists(pipeline.checkpoint_path("iter1")));
  CHECK(fs::exists(pipeline.checkpoint_path("iter2")));
  CHECK(fs::exists(pipeline.checkpoint_path("finetuned")));
  CHECK(fs::exists(pipeline.hypotheses_path("greedy")));
  CHECK(fs::exists(pipeline.hypotheses_path("beam")));
  CHECK(fs::exists(pipeline.report_path()));
  CHECK(fs::exists(pipeline.metrics_path()));

  // The fine-tuned checkpoint loads and carries a CTC head sized to the
  // transcript vocabulary.
  const Model model = load_checkpoint(pipeline.checkpoint_path("finetuned"));
  const auto transcripts = read_transcripts(cfg.transcripts);
  CHECK(ctc_vocab_size(model) ==
        static_cast<int>(build_vocab(transcripts).size()));

  // Rerunning must skip every stage without touching artifacts.
  const std::string before = file_bytes(pipeline.checkpoint_path("iter2"));
  const auto mtime = fs::last_write_time(pipeline.checkpoint_path("iter2"));
  Pipeline again(cfg);
  again.run_all();
  CHECK(fs::last_write_time(pipeline.checkpoint_path("iter2")) == mtime);
  CHECK(file_bytes(pipeline.checkpoint_path("iter2")) == before);

  // Hypothesis files follow the "utt_id<TAB>text" convention.
  std::ifstream hyp(pipeline.hypotheses_path("greedy"));
  std::string line;
  REQUIRE(std::getline(hyp, line));
  CHECK(line.find('\t') != std::string::npos);
  CHECK(line.rfind("lab_000", 0) == 0);
}
