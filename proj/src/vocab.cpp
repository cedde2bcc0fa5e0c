#include "subjectlab/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "subjectlab/error.hpp"

namespace subjectlab {

namespace {

std::size_t utf8_width(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

bool is_space(std::string_view ch) {
  return ch == " " || ch == "\t" || ch == "\n" || ch == "\r" || ch == "\f" || ch == "\v" ||
         ch == kSeparator;
}

// Words of a line, each as its code points.
std::vector<std::vector<std::string>> split_words(std::string_view text) {
  std::vector<std::vector<std::string>> words;
  std::vector<std::string> cur;
  for (auto& ch : utf8_chars(text)) {
    if (is_space(ch)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(std::move(ch));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string join(const std::vector<std::string>& chars, std::size_t begin, std::size_t len) {
  std::string s;
  for (std::size_t i = begin; i < begin + len; ++i) s += chars[i];
  return s;
}

using Entry = std::pair<std::string, std::uint64_t>;

void rank_entries(std::vector<Entry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t w = utf8_width(static_cast<unsigned char>(text[i]));
    if (i + w > text.size()) w = 1;
    for (std::size_t j = 1; j < w; ++j)
      if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) w = 1;
    out.emplace_back(text.substr(i, w));
    i += w;
  }
  return out;
}

std::size_t utf8_length(std::string_view text) { return utf8_chars(text).size(); }

Vocabulary::Vocabulary(std::vector<std::string> surfaces, std::vector<std::uint64_t> counts)
    : surfaces_(std::move(surfaces)), counts_(std::move(counts)) {
  if (surfaces_.size() != counts_.size())
    throw ValueError("vocabulary: surface and count lists differ in length");
  if (surfaces_.size() < kReservedTokens || surfaces_[kPadId] != "<pad>" ||
      surfaces_[kUnkId] != "<unk>" || surfaces_[kSepId] != kSeparator)
    throw ValueError("vocabulary: reserved entries <pad>, <unk>, separator must come first");
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    if (surfaces_[i].empty()) throw ValueError("vocabulary: empty surface at id " + std::to_string(i));
    if (!index_.emplace(surfaces_[i], static_cast<int>(i)).second)
      throw ValueError("vocabulary: duplicate surface '" + surfaces_[i] + "'");
    if (i >= kReservedTokens) max_piece_ = std::max(max_piece_, utf8_length(surfaces_[i]));
  }
}

const std::string& Vocabulary::surface(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= surfaces_.size())
    throw ValueError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(surfaces_.size()));
  return surfaces_[id];
}

std::uint64_t Vocabulary::count(int id) const {
  surface(id);
  return counts_[id];
}

int Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  return it == index_.end() ? -1 : it->second;
}

PieceCounts count_pieces(const std::vector<std::string>& corpus, std::size_t max_piece) {
  PieceCounts pc;
  for (const auto& line : corpus)
    for (const auto& w : split_words(line)) {
      for (const auto& ch : w) ++pc.chars[ch];
      const std::size_t n = w.size();
      for (std::size_t len = 2; len <= std::min(max_piece, n); ++len)
        for (std::size_t s = 0; s + len <= n; ++s) ++pc.pieces[join(w, s, len)];
      if (n > max_piece) ++pc.pieces[join(w, 0, n)];
    }
  return pc;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, const VocabOptions& options) {
  if (corpus.empty()) throw ValueError("build_vocab: corpus is empty");
  if (options.max_size < kReservedTokens)
    throw ValueError("build_vocab: max_size " + std::to_string(options.max_size) +
                     " is smaller than the " + std::to_string(kReservedTokens) +
                     " reserved tokens");
  if (options.max_piece < 2) throw ValueError("build_vocab: max_piece must be at least 2");
  const PieceCounts pc = count_pieces(corpus, options.max_piece);
  if (pc.chars.empty()) throw ValueError("build_vocab: corpus contains no words");

  std::vector<Entry> chars(pc.chars.begin(), pc.chars.end());
  std::vector<Entry> pieces(pc.pieces.begin(), pc.pieces.end());
  rank_entries(chars);
  rank_entries(pieces);
  if (kReservedTokens + chars.size() > options.max_size)
    throw ValueError("build_vocab: max_size " + std::to_string(options.max_size) +
                     " cannot hold the reserved tokens and " + std::to_string(chars.size()) +
                     " character fallback entries");

  std::vector<std::string> surfaces = {"<pad>", "<unk>", std::string(kSeparator)};
  std::vector<std::uint64_t> counts = {0, 0, 0};
  for (const auto& [s, c] : chars) {
    surfaces.push_back(s);
    counts.push_back(c);
  }
  for (const auto& [s, c] : pieces) {
    if (surfaces.size() >= options.max_size) break;
    surfaces.push_back(s);
    counts.push_back(c);
  }
  return Vocabulary(std::move(surfaces), std::move(counts));
}

TokenSeq tokenize_ids(const Vocabulary& vocab, std::string_view text) {
  TokenSeq ids;
  const auto words = split_words(text);
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    if (wi) ids.push_back(kSepId);
    const auto& w = words[wi];
    std::size_t i = 0;
    while (i < w.size()) {
      std::size_t len = std::min(vocab.max_piece(), w.size() - i);
      int id = -1;
      for (; len >= 1; --len) {
        id = vocab.find(join(w, i, len));
        if (id >= int(kReservedTokens)) break;
        id = -1;
      }
      if (id < 0) {
        ids.push_back(kUnkId);
        i += 1;
      } else {
        ids.push_back(id);
        i += len;
      }
    }
  }
  return ids;
}

TokenSeq tokenize(const Vocabulary& vocab, std::string_view text, std::size_t length) {
  TokenSeq ids = tokenize_ids(vocab, text);
  if (ids.size() > length)
    throw ValueError("prompt '" + std::string(text) + "' needs " + std::to_string(ids.size()) +
                     " tokens; the limit is " + std::to_string(length));
  ids.resize(length, kPadId);
  return ids;
}

std::string detokenize(const Vocabulary& vocab, const TokenSeq& ids) {
  std::string out;
  for (int id : ids) {
    const std::string& s = vocab.surface(id);
    if (id == kPadId) continue;
    out += id == kSepId ? std::string(" ") : s;
  }
  return out;
}

RankRange scaled_rank_range(const RankRange& range, std::size_t vocab_size,
                            std::size_t reference) {
  if (range.lo > range.hi) throw ValueError("rank range has lo > hi");
  if (vocab_size >= reference || reference == 0) return range;
  const double f = static_cast<double>(vocab_size) / static_cast<double>(reference);
  return {static_cast<std::size_t>(static_cast<double>(range.lo) * f),
          static_cast<std::size_t>(static_cast<double>(range.hi) * f)};
}

std::vector<int> eligible_identifier_tokens(const Vocabulary& vocab, const RankRange& range) {
  std::vector<int> out;
  if (vocab.size() == 0) return out;
  const std::size_t hi = std::min(range.hi, vocab.size() - 1);
  for (std::size_t r = std::max(range.lo, kReservedTokens); r <= hi; ++r) {
    const int id = static_cast<int>(r);
    const std::string& s = vocab.surface(id);
    const auto chars = utf8_chars(s);
    if (chars.size() > 3) continue;
    if (std::any_of(chars.begin(), chars.end(), [](const std::string& c) { return is_space(c); }))
      continue;
    if (tokenize_ids(vocab, s) != TokenSeq{id}) continue;
    out.push_back(id);
  }
  return out;
}

Identifier mine_rare_identifier(const Vocabulary& vocab, std::size_t k, const RankRange& range,
                                Rng& rng) {
  if (k < 1 || k > 3) throw ValueError("identifier length k must be in 1..3");
  if (range.lo > range.hi) throw ValueError("rank range has lo > hi");
  const auto eligible = eligible_identifier_tokens(vocab, range);
  if (eligible.empty())
    throw ValueError("vocabulary too small / range empty: no eligible tokens in ranks [" +
                     std::to_string(range.lo) + ", " + std::to_string(range.hi) +
                     "] of a vocabulary of " + std::to_string(vocab.size()));
  if (eligible.size() < k)
    throw ValueError("only " + std::to_string(eligible.size()) + " eligible tokens in ranks [" +
                     std::to_string(range.lo) + ", " + std::to_string(range.hi) + "], " +
                     std::to_string(k - eligible.size()) + " short of k = " + std::to_string(k));

  constexpr int kAttempts = 10000;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    // Partial Fisher-Yates over a copy gives k distinct, uniformly ordered picks.
    std::vector<int> pool = eligible;
    TokenSeq ids;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      ids.push_back(pool[i]);
    }
    Identifier ident;
    ident.surface = detokenize(vocab, ids);
    if (tokenize_ids(vocab, ident.surface) != ids) continue;
    ident.ids = std::move(ids);
    ident.k = k;
    return ident;
  }
  throw ValueError("no identifier of " + std::to_string(k) +
                   " tokens round-trips through the tokenizer in this range");
}

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  for (std::size_t i = 0; i < vocab.size(); ++i)
    out << i << '\t' << vocab.surfaces()[i] << '\t' << vocab.counts()[i] << '\n';
  if (!out) throw IoError("failed writing vocabulary: " + path.string());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("vocabulary not found: " + path.string());
  std::vector<std::string> surfaces;
  std::vector<std::uint64_t> counts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.rfind('\t');
    if (t1 == std::string::npos || t1 == t2)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected rank<TAB>surface<TAB>count");
    const std::size_t rank = std::stoull(line.substr(0, t1));
    if (rank != surfaces.size())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": ranks must be contiguous");
    surfaces.push_back(line.substr(t1 + 1, t2 - t1 - 1));
    counts.push_back(std::stoull(line.substr(t2 + 1)));
  }
  return Vocabulary(std::move(surfaces), std::move(counts));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace subjectlab
