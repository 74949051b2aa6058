#include "l2s/config.hpp"

#include "l2s/error.hpp"

namespace l2s {

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::encoder_only: return "encoder_only";
    case Arch::encoder_decoder: return "encoder_decoder";
    case Arch::decoder_only: return "decoder_only";
  }
  return "?";
}

Arch arch_from_name(const std::string& s) {
  if (s == "encoder_only") return Arch::encoder_only;
  if (s == "encoder_decoder") return Arch::encoder_decoder;
  if (s == "decoder_only") return Arch::decoder_only;
  throw ContractError("unknown arch '" + s + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ContractError("config: n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ContractError("config: d_model must be divisible by n_heads");
  if (d_model < 1 || d_ff < 1 || vocab_size < 4 || max_seq_len < 2)
    throw ContractError("config: degenerate dimension");
}

}  // namespace l2s
