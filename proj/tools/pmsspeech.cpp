// tools/pmsspeech.cpp
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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pmsspeech/beam.hpp"
#include "pmsspeech/ctc.hpp"
#include "pmsspeech/features.hpp"
#include "pmsspeech/finetune.hpp"
#include "pmsspeech/kmeans.hpp"
#include "pmsspeech/ngram.hpp"
#include "pmsspeech/parallel.hpp"
#include "pmsspeech/pipeline.hpp"
#include "pmsspeech/rng.hpp"
#include "pmsspeech/wer.hpp"

namespace fs = std::filesystem;
using namespace pms;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"progressive multi-scale speech SSL toolkit"};
  app.require_subcommand(1);

  // ---- gen-toy-corpus ----
  auto* gen = app.add_subcommand("gen-toy-corpus",
                                 "generate the synthetic multi-tone corpus");
  std::string gen_out = "corpus";
  std::string gen_config;
  ToyCorpusSpec spec;
  gen->add_option("--out", gen_out, "corpus output directory");
  gen->add_option("--unlabeled", spec.num_unlabeled, "unlabeled utterance count");
  gen->add_option("--labeled", spec.num_labeled, "labeled utterance count");
  gen->add_option("--symbols", spec.num_symbols, "symbol inventory size");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--write-config", gen_config,
                  "also write a ready-to-run experiment config here");
  gen->callback([&] {
    gen_toy_corpus(gen_out, spec);
    std::cout << "wrote corpus to " << gen_out << "\n";
    if (!gen_config.empty()) {
      ExperimentConfig cfg = default_toy_config(gen_out, "runs/toy");
      std::ofstream out(gen_config);
      if (!out) throw StageError("cannot write config: " + gen_config);
      out << annotated_config_text(cfg);
      std::cout << "wrote config to " << gen_config << "\n";
    }
  });

  // ---- features ----
  auto* features = app.add_subcommand("features", "MFCC-39 extraction to PMSF files");
  std::string feat_in, feat_out;
  bool no_normalize = false;
  int feat_threads = 0;
  features->add_option("--in", feat_in, "audio directory (.wav/.pmsw)")->required();
  features->add_option("--out", feat_out, "output directory")->required();
  features->add_flag("--no-normalize", no_normalize, "skip utterance normalization");
  features->add_option("--threads", feat_threads, "worker threads (0 = auto)");
  features->callback([&] {
    const std::vector<Utterance> utts = scan_corpus(feat_in);
    if (utts.empty()) throw ValidationError("no audio files in " + feat_in);
    fs::create_directories(feat_out);
    parallel_for_ordered(utts.size(), feat_threads, [&](std::size_t i) {
      FeatureSequence f = mfcc39(read_audio(utts[i].path));
      if (!no_normalize) f = utterance_normalize(f);
      write_pmsf((fs::path(feat_out) / (utts[i].id + ".pmsf")).string(), f);
    });
    std::cout << "wrote " << utts.size() << " feature files to " << feat_out << "\n";
  });

  // ---- cluster ----
  auto* cluster = app.add_subcommand("cluster", "k-means codebook over PMSF features");
  std::string cl_features, cl_codebook, cl_labels, cl_source = "mfcc";
  int cl_k = 100, cl_iters = 50;
  double cl_subsample = 1.0;
  std::uint64_t cl_seed = 1;
  cluster->add_option("--features", cl_features, "PMSF feature directory")->required();
  cluster->add_option("--k", cl_k, "cluster count")->required();
  cluster->add_option("--subsample", cl_subsample, "frame subsample fraction");
  cluster->add_option("--max-iters", cl_iters, "Lloyd iteration cap");
  cluster->add_option("--seed", cl_seed, "clustering seed");
  cluster->add_option("--source", cl_source, "label-file source tag");
  cluster->add_option("--codebook", cl_codebook, "codebook output path")->required();
  cluster->add_option("--labels", cl_labels, "label-file output path")->required();
  cluster->callback([&] {
    std::vector<Mat> corpus;
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(cl_features))
      if (entry.path().extension() == ".pmsf") ids.push_back(entry.path().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw ValidationError("no PMSF files in " + cl_features);
    for (const std::string& path : ids) corpus.push_back(read_pmsf(path).frames);
    const Mat sample = subsample_frames(corpus, cl_subsample, cl_seed);
    const ClusterModel model = kmeans_fit(sample, cl_k, cl_iters, cl_seed);
    TargetAssignment assignment;
    assignment.codebook_size = cl_k;
    assignment.source = cl_source;
    for (const Mat& utt : corpus) assignment.labels.push_back(assign(model, utt));
    write_codebook(cl_codebook, model);
    write_labels(cl_labels, assignment);
    std::cout << "k=" << cl_k << " inertia=" << model.inertia << " over " << sample.rows()
              << " sampled frames\n";
  });

  // ---- config-driven stages ----
  std::string config_path;
  int iteration = 0;
  auto add_config_option = [&config_path](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
  };

  auto* pretrain = app.add_subcommand("pretrain", "run pretraining (iteration 1 or 2)");
  add_config_option(pretrain);
  pretrain->add_option("--iteration", iteration, "1 or 2")->required();
  pretrain->callback([&] {
    Pipeline pipeline(load_experiment_config(config_path));
    if (iteration == 1)
      pipeline.stage_pretrain1();
    else if (iteration == 2)
      pipeline.stage_pretrain2();
    else
      throw ValidationError("--iteration must be 1 or 2");
    std::cout << "checkpoint: "
              << pipeline.checkpoint_path(iteration == 1 ? "iter1" : "iter2") << "\n";
  });

  auto* extract = app.add_subcommand("extract", "dump encoder-layer features");
  add_config_option(extract);
  extract->callback([&] {
    Pipeline pipeline(load_experiment_config(config_path));
    pipeline.stage_extract();
    std::cout << "features under " << pipeline.run_dir() << "\n";
  });

  auto* finetune = app.add_subcommand("finetune", "CTC fine-tuning of the encoder");
  add_config_option(finetune);
  finetune->callback([&] {
    Pipeline pipeline(load_experiment_config(config_path));
    pipeline.stage_finetune();
    std::cout << "checkpoint: " << pipeline.checkpoint_path("finetuned") << "\n";
  });

  auto* run_all = app.add_subcommand("run-all", "two-iteration recipe end to end");
  add_config_option(run_all);
  run_all->callback([&] {
    Pipeline pipeline(load_experiment_config(config_path));
    pipeline.run_all();
    std::cout << "run dir: " << pipeline.run_dir() << "\n"
              << "report: " << pipeline.report_path() << "\n";
  });

  // ---- decode ----
  auto* decode = app.add_subcommand("decode", "greedy or beam decoding of a corpus");
  std::string dec_ckpt, dec_vocab, dec_in, dec_out, dec_lm;
  DecodeConfig dec_cfg;
  bool dec_greedy = false;
  int dec_threads = 0;
  decode->add_option("--checkpoint", dec_ckpt, "fine-tuned checkpoint")->required();
  decode->add_option("--vocab", dec_vocab, "vocabulary file (one token per line)")
      ->required();
  decode->add_option("--in", dec_in, "audio directory")->required();
  decode->add_option("--out", dec_out, "hypotheses TSV output")->required();
  decode->add_option("--lm", dec_lm, "ARPA language model for shallow fusion");
  decode->add_option("--beam", dec_cfg.beam_width, "beam width");
  decode->add_option("--lm-weight", dec_cfg.lm_weight, "w1, LM weight");
  decode->add_option("--length-bonus", dec_cfg.length_bonus, "w2, per-token bonus");
  decode->add_flag("--greedy", dec_greedy, "greedy decoding instead of beam search");
  decode->add_option("--threads", dec_threads, "worker threads (0 = auto)");
  decode->callback([&] {
    const Model model = load_checkpoint(dec_ckpt);
    std::vector<std::string> vocab;
    std::ifstream vin(dec_vocab);
    if (!vin) throw ValidationError("cannot open vocabulary: " + dec_vocab);
    std::string tok;
    while (std::getline(vin, tok))
      if (!tok.empty()) vocab.push_back(tok);
    if (static_cast<int>(vocab.size()) != ctc_vocab_size(model))
      throw ValidationError("vocabulary size does not match the CTC head");

    NgramLM lm;
    LmFusion fusion;
    const LmFusion* fusion_ptr = nullptr;
    if (!dec_lm.empty()) {
      lm = NgramLM::load_arpa(dec_lm);
      fusion.lm = &lm;
      fusion.symbol_tokens.push_back("");
      for (const std::string& t : vocab) fusion.symbol_tokens.push_back(t);
      fusion_ptr = &fusion;
    }

    const std::vector<Utterance> utts = scan_corpus(dec_in);
    if (utts.empty()) throw ValidationError("no audio files in " + dec_in);
    std::vector<std::string> lines(utts.size());
    parallel_for_ordered(utts.size(), dec_threads, [&](std::size_t i) {
      const Mat lp = ctc_inference_log_probs(model, read_audio(utts[i].path));
      const std::vector<int> ids =
          dec_greedy ? greedy_decode(lp) : beam_decode(lp, dec_cfg, fusion_ptr).symbols;
      std::string text;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (k) text += ' ';
        text += vocab[static_cast<std::size_t>(ids[k] - 1)];
      }
      lines[i] = utts[i].id + "\t" + text;
    });
    std::ofstream out(dec_out);
    if (!out) throw StageError("cannot write hypotheses: " + dec_out);
    for (const std::string& line : lines) out << line << "\n";
    std::cout << "wrote " << lines.size() << " hypotheses to " << dec_out << "\n";
  });

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "WER of hypotheses against references");
  std::string eval_hyp, eval_ref;
  eval->add_option("--hyp", eval_hyp, "hypotheses TSV")->required();
  eval->add_option("--ref", eval_ref, "reference transcripts TSV")->required();
  eval->callback([&] {
    const auto hyp = read_transcripts(eval_hyp);
    const auto ref = read_transcripts(eval_ref);
    EditCounts total;
    long ref_tokens = 0;
    for (const auto& [id, text] : ref) {
      const auto it = hyp.find(id);
      const std::vector<std::string> r = split_tokens(text);
      const std::vector<std::string> h =
          it == hyp.end() ? std::vector<std::string>{} : split_tokens(it->second);
      const EditCounts c = edit_align(r, h);
      total.substitutions += c.substitutions;
      total.insertions += c.insertions;
      total.deletions += c.deletions;
      ref_tokens += static_cast<long>(r.size());
    }
    if (ref_tokens == 0) throw ValidationError("references contain no tokens");
    std::cout << "WER=" << static_cast<double>(total.distance()) / ref_tokens
              << " S=" << total.substitutions << " I=" << total.insertions
              << " D=" << total.deletions << " N=" << ref_tokens << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const StageError& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
