#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "subjectlab/rng.hpp"

namespace subjectlab {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSepId = 2;
inline constexpr std::size_t kReservedTokens = 3;
inline constexpr std::size_t kPromptLength = 16;
// Word boundary token (U+2581). Detokenizes to a single space.
inline constexpr std::string_view kSeparator = "\xE2\x96\x81";

// Splits UTF-8 into code points (one std::string per code point). Malformed
// bytes are passed through one at a time.
std::vector<std::string> utf8_chars(std::string_view text);
std::size_t utf8_length(std::string_view text);

// Frequency-ranked token inventory. Layout by id:
//   0 <pad>, 1 <unk>, 2 separator
//   single characters, by descending count (fallback block)
//   multi-character pieces, by descending count
// Within each block equal counts are ordered by byte-wise comparison of the
// surfaces.
class Vocabulary {
 public:
  Vocabulary() = default;
  // Entries in id order, reserved tokens included.
  Vocabulary(std::vector<std::string> surfaces, std::vector<std::uint64_t> counts);

  std::size_t size() const noexcept { return surfaces_.size(); }
  const std::string& surface(int id) const;
  std::uint64_t count(int id) const;
  // -1 when absent.
  int find(std::string_view surface) const;
  bool is_reserved(int id) const noexcept { return id >= 0 && id < int(kReservedTokens); }
  // Longest surface in code points.
  std::size_t max_piece() const noexcept { return max_piece_; }

  const std::vector<std::string>& surfaces() const noexcept { return surfaces_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

 private:
  std::vector<std::string> surfaces_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_ = 1;
};

struct VocabOptions {
  std::size_t max_size = 12000;
  // Longest multi-character piece counted (longer words are also counted
  // whole).
  std::size_t max_piece = 6;
};

// Piece counts over whitespace-split words. Every word occurrence adds 1 to
// each of its substrings of 2..max_piece code points (per position) and, when
// longer than max_piece, 1 to the whole word. Characters are counted
// separately, once per occurrence. The separator character is treated as
// whitespace.
struct PieceCounts {
  std::unordered_map<std::string, std::uint64_t> chars;
  std::unordered_map<std::string, std::uint64_t> pieces;
};
PieceCounts count_pieces(const std::vector<std::string>& corpus, std::size_t max_piece);

// Throws ValueError for an empty corpus or when max_size cannot hold the
// reserved and character entries.
Vocabulary build_vocab(const std::vector<std::string>& corpus, const VocabOptions& options = {});

using TokenSeq = std::vector<int>;

// Greedy longest match per word, separator between words, right-padded to
// `length`. Unknown characters become <unk>. Throws ValueError naming the
// required length when the prompt does not fit.
TokenSeq tokenize(const Vocabulary& vocab, std::string_view text,
                  std::size_t length = kPromptLength);
// Unpadded ids.
TokenSeq tokenize_ids(const Vocabulary& vocab, std::string_view text);

// Concatenates surfaces, mapping the separator to a space and dropping
// padding. Throws ValueError for ids outside the vocabulary.
std::string detokenize(const Vocabulary& vocab, const TokenSeq& ids);

struct Identifier {
  std::string surface;
  TokenSeq ids;
  std::size_t k = 0;
};

struct RankRange {
  std::size_t lo = 5000;
  std::size_t hi = 10000;
};

// For vocabularies smaller than `reference` entries the range is scaled by
// size / reference (so the default window keeps its relative position).
RankRange scaled_rank_range(const RankRange& range, std::size_t vocab_size,
                            std::size_t reference = 12000);

// Ids eligible as identifier pieces: rank in [lo, hi], not reserved, at most
// 3 code points, no whitespace, and tokenizing the surface alone gives back
// exactly that id.
std::vector<int> eligible_identifier_tokens(const Vocabulary& vocab, const RankRange& range);

// Draws k distinct eligible tokens uniformly without replacement. Draws whose
// concatenation does not tokenize back to the same ids are discarded and
// redrawn. Throws ValueError if the range is empty, holds fewer than k
// eligible tokens, or no valid draw is found.
Identifier mine_rare_identifier(const Vocabulary& vocab, std::size_t k, const RankRange& range,
                                Rng& rng);

// "rank<TAB>surface<TAB>count" per line, UTF-8.
void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

// Lines of a text file, empty lines skipped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace subjectlab
