#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace l2s {

// Byte-level vocabulary with three special ids. The full variant covers all
// 256 bytes; the restricted variant covers a 64-symbol alphabet, standing in
// for a model family with a different, smaller tokenizer.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kNumSpecials = 3;

  static Vocab full_byte();     // size 259, byte b -> id b + 3
  static Vocab restricted64();  // size 67, 64-symbol alphabet

  // Reconstructs the vocab named in a checkpoint header.
  static Vocab from_kind(const std::string& kind);

  // Same, but verifies the model's embedding table covers the vocabulary.
  static Vocab from_kind_checked(const std::string& kind, int model_vocab_size);

  int size() const { return kNumSpecials + static_cast<int>(alphabet_.size()); }
  const std::string& kind() const { return kind_; }

  bool contains_byte(unsigned char b) const { return byte_to_id_[b] >= 0; }

  // Token count equals byte count (+1 with EOS); BOS is never inserted here.
  std::vector<int> encode(const std::string& text, bool add_eos) const;

  // Specials are dropped from the output text.
  std::string decode(const std::vector<int>& ids) const;

 private:
  Vocab(std::string kind, const std::string& alphabet);

  std::string kind_;
  std::string alphabet_;       // byte values in id order
  int byte_to_id_[256];        // -1 when outside the alphabet
};

}  // namespace l2s
