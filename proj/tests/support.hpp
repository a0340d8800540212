// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for tests that train on the synthetic corpus.
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dmacos/corpus.hpp"
#include "dmacos/model.hpp"

namespace dmacos::fixtures {

struct Vocabs {
  corpus::Vocab body;
  corpus::Vocab summary;
};

/// Body vocabulary from body tokens; summary vocabulary from names and summaries.
inline Vocabs build_vocabs(std::span<const corpus::Sample> samples, std::size_t cap = 5000) {
  std::vector<std::vector<std::string>> body, words;
  for (const auto& s : samples) {
    body.push_back(s.body_tokens);
    words.push_back(s.name_tokens);
    words.push_back(s.summary_tokens);
  }
  return {corpus::build_vocab(body, cap), corpus::build_vocab(words, cap)};
}

inline model::ModelConfig tiny_config(const Vocabs& v, std::size_t hidden = 16) {
  model::ModelConfig c;
  c.hidden = hidden;
  c.body_embed = hidden / 2;
  c.type_embed = 4;
  c.word_embed = hidden / 2;
  c.body_vocab = v.body.size();
  c.summary_vocab = v.summary.size();
  c.name_max = 10;
  c.body_max = 100;
  c.summary_max = 13;
  return c;
}

}  // namespace dmacos::fixtures
