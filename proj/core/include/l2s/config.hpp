#pragma once

#include <cstdint>
#include <string>

namespace l2s {

enum class Arch { encoder_only, encoder_decoder, decoder_only };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

// Architecture hyperparameters. Layer count applies per stack; an
// encoder-decoder model has n_layers encoder blocks and n_layers decoder
// blocks. Positions are learned absolute embeddings.
struct ModelConfig {
  Arch arch = Arch::decoder_only;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int vocab_size = 259;
  int max_seq_len = 512;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

}  // namespace l2s
