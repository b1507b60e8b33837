#include "tokweight/corpus.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tokweight {

void TokenSequence::validate(int vocab, std::size_t max_length) const {
  if (ids.empty() || ids.size() > max_length) {
    throw std::invalid_argument("sequence " + std::to_string(seq_id) + " has length " +
                                std::to_string(ids.size()) + ", allowed [1, " +
                                std::to_string(max_length) + "]");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::invalid_argument("sequence " + std::to_string(seq_id) + " position " +
                                  std::to_string(i) + ": token " + std::to_string(ids[i]) +
                                  " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

std::vector<TokenSequence> chunk_documents(std::span<const std::vector<TokenId>> documents,
                                           std::size_t length, std::uint64_t first_seq_id) {
  if (length <= 1) throw std::invalid_argument("chunk length must be at least 2");
  std::vector<TokenSequence> out;
  std::uint64_t next_id = first_seq_id;
  for (const auto& doc : documents) {
    for (std::size_t start = 0; start + length <= doc.size(); start += length) {
      TokenSequence seq;
      seq.seq_id = next_id++;
      seq.ids.assign(doc.begin() + static_cast<std::ptrdiff_t>(start),
                     doc.begin() + static_cast<std::ptrdiff_t>(start + length));
      out.push_back(std::move(seq));
    }
  }
  return out;
}

std::string format_ids(std::span<const TokenId> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    TokenId v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw std::invalid_argument("malformed token id list: '" + text + "'");
    ids.push_back(v);
    p = next;
  }
  return ids;
}

namespace {

template <class T>
std::string join_numbers(std::span<const T> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(values[i]);
  }
  return s;
}

}  // namespace

void write_corpus(std::ostream& out, std::span<const CorpusRecord> records) {
  for (const auto& r : records) {
    out << "seq_id=" << r.seq_id << "\tids=" << format_ids(r.ids);
    if (!r.answers.empty()) {
      out << "\tanswers=";
      for (std::size_t k = 0; k < r.answers.size(); ++k) {
        if (k) out << ',';
        out << format_ids(r.answers[k]);
      }
    }
    if (!r.marked.empty()) out << "\tmarks=" << join_numbers<std::size_t>(r.marked);
    if (!r.kind.empty()) out << "\tkind=" << r.kind;
    out << '\n';
  }
}

std::vector<CorpusRecord> read_corpus(std::istream& in) {
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    CorpusRecord rec;
    bool have_id = false, have_ids = false;
    std::stringstream fields(line);
    std::string field;
    while (std::getline(fields, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("corpus line " + std::to_string(line_no) +
                                    ": field without '=': " + field);
      }
      const std::string name = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (name == "seq_id") {
        rec.seq_id = std::stoull(value);
        have_id = true;
      } else if (name == "ids") {
        rec.ids = parse_ids(value);
        have_ids = true;
      } else if (name == "answers") {
        std::stringstream spans(value);
        std::string span;
        while (std::getline(spans, span, ',')) rec.answers.push_back(parse_ids(span));
      } else if (name == "marks") {
        for (TokenId m : parse_ids(value)) rec.marked.push_back(static_cast<std::size_t>(m));
      } else if (name == "kind") {
        rec.kind = value;
      }
    }
    if (!have_id || !have_ids) {
      throw std::invalid_argument("corpus line " + std::to_string(line_no) +
                                  ": missing seq_id or ids");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace tokweight
