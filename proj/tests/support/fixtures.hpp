#pragma once

// Small models and corpora shared by several suites.

#include "zsl/data.hpp"
#include "zsl/model.hpp"

namespace zsl::testing {

inline ModelConfig tiny_config(ClassifierKind kind = ClassifierKind::soft_attention) {
  ModelConfig c;
  c.classifier = kind;
  c.encoder.num_layers = 2;
  c.encoder.num_heads = 2;
  c.encoder.model_dim = 16;
  c.encoder.ffn_dim = 32;
  c.encoder.max_seq_len = 64;
  c.attention.layer_size = 8;
  c.attention.hidden_size = 12;
  c.split_mode = SplitMode::synthetic_subword;
  return c;
}

struct TinySetup {
  SyntheticCorpus corpus;
  Model model;
};

inline TinySetup tiny_setup(std::size_t n_train = 60, std::uint64_t seed = 5,
                            ClassifierKind kind = ClassifierKind::soft_attention, bool distributed = false) {
  SyntheticConfig sc;
  sc.n_train = n_train;
  sc.n_dev = 20;
  sc.n_test = 20;
  sc.vocab_size = 40;
  sc.cue_lexicon_size = 4;
  sc.min_length = 3;
  sc.max_length = 8;
  sc.distributed_cues = distributed;
  sc.seed = seed;
  TinySetup t{generate_synthetic(sc), {}};
  ModelConfig mc = tiny_config(kind);
  Vocab v = build_vocab({&t.corpus.train, &t.corpus.dev, &t.corpus.test}, mc.tokenizer());
  for (Dataset* ds : {&t.corpus.train, &t.corpus.dev, &t.corpus.test}) tokenize_dataset(*ds, v, mc.tokenizer());
  t.model = init_model(mc, v, seed);
  return t;
}

}  // namespace zsl::testing
