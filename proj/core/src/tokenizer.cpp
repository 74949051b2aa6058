#include "l2s/tokenizer.hpp"

#include "l2s/error.hpp"

namespace l2s {
namespace {

std::string full_alphabet() {
  std::string a(256, '\0');
  for (int b = 0; b < 256; ++b) a[static_cast<size_t>(b)] = static_cast<char>(b);
  return a;
}

// 64 symbols: covers the synthetic task text (lowercase, digits, space and
// the task-prefix punctuation) plus enough uppercase to reach 64. Must stay
// a strict subset of the full byte alphabet so the two tokenizers genuinely
// disagree on general strings.
std::string restricted_alphabet() {
  return "abcdefghijklmnopqrstuvwxyz0123456789 .,:;!?-'\"()ABCDEFGHIJKLMNOP";
}

}  // namespace

Vocab::Vocab(std::string kind, const std::string& alphabet)
    : kind_(std::move(kind)), alphabet_(alphabet) {
  for (int i = 0; i < 256; ++i) byte_to_id_[i] = -1;
  for (size_t i = 0; i < alphabet_.size(); ++i)
    byte_to_id_[static_cast<unsigned char>(alphabet_[i])] = kNumSpecials + static_cast<int>(i);
}

Vocab Vocab::full_byte() { return Vocab("byte_full", full_alphabet()); }

Vocab Vocab::restricted64() { return Vocab("byte64", restricted_alphabet()); }

Vocab Vocab::from_kind(const std::string& kind) {
  if (kind == "byte_full") return full_byte();
  if (kind == "byte64") return restricted64();
  throw ContractError("unknown vocab kind '" + kind + "'");
}

Vocab Vocab::from_kind_checked(const std::string& kind, int model_vocab_size) {
  Vocab v = from_kind(kind);
  if (v.size() != model_vocab_size)
    throw ContractError("tokenizer '" + kind + "' has " + std::to_string(v.size()) +
                        " ids but the model vocab holds " + std::to_string(model_vocab_size));
  return v;
}

std::vector<int> Vocab::encode(const std::string& text, bool add_eos) const {
  std::vector<int> ids;
  ids.reserve(text.size() + (add_eos ? 1 : 0));
  for (size_t i = 0; i < text.size(); ++i) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    const int id = byte_to_id_[b];
    if (id < 0)
      throw ContractError("encode: byte 0x" + std::to_string(static_cast<int>(b)) +
                          " at position " + std::to_string(i) + " outside '" + kind_ +
                          "' alphabet");
    ids.push_back(id);
  }
  if (add_eos) ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= size())
      throw ContractError("decode: id " + std::to_string(id) + " outside vocab of size " +
                          std::to_string(size()));
    if (id < kNumSpecials) continue;
    out.push_back(alphabet_[static_cast<size_t>(id - kNumSpecials)]);
  }
  return out;
}

}  // namespace l2s
