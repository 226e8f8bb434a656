#include "triage/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "triage/error.hpp"

namespace triage {

namespace {

std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

// RFC 4180 records: quoted fields may hold separators, doubled quotes and
// newlines.
class CsvReader {
 public:
  explicit CsvReader(std::string_view data) : data_(data) {
    if (data_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
  }

  bool next(std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    // Skip blank lines between records.
    while (pos_ < data_.size() && (data_[pos_] == '\n' || data_[pos_] == '\r')) {
      if (data_[pos_] == '\n') ++line_;
      ++pos_;
    }
    if (pos_ >= data_.size()) return false;
    line = line_ + 1;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    while (pos_ < data_.size()) {
      char c = data_[pos_++];
      if (quoted) {
        if (c == '"') {
          if (pos_ < data_.size() && data_[pos_] == '"') {
            field.push_back('"');
            ++pos_;
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && !field_started) {
        quoted = true;
        field_started = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
        ++line_;
        break;
      } else {
        field.push_back(c);
        field_started = true;
      }
    }
    if (quoted) {
      throw Error(ErrorCode::kParseError,
                  "unterminated quoted field starting on line " + std::to_string(line));
    }
    fields.push_back(std::move(field));
    return true;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kUnreadableFile, "cannot read file: " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) {
    throw Error(ErrorCode::kUnreadableFile, "cannot read file: " + path.string());
  }
  return ss.str();
}

std::optional<int> parse_year(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  int value = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    value = value * 10 + (c - '0');
    if (value > 100000) return std::nullopt;
  }
  return value;
}

std::optional<std::string> optional_text(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  return std::string(s);
}

std::vector<std::string> split_keywords(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(';', start);
    if (end == std::string_view::npos) end = s.size();
    auto kw = trim(s.substr(start, end - start));
    if (!kw.empty()) out.emplace_back(kw);
    start = end + 1;
  }
  return out;
}

bool admissible(const Document& doc) {
  return !doc.id.empty() && !(trim(doc.title).empty() && trim(doc.abstract).empty());
}

void add_row(Corpus& corpus, Document doc) {
  if (!admissible(doc)) {
    corpus.note_skipped();
    return;
  }
  if (!corpus.add(std::move(doc))) corpus.note_duplicate();
}

Corpus ingest_csv(std::string_view content) {
  CsvReader reader(content);
  std::vector<std::string> row;
  std::size_t line = 0;
  if (!reader.next(row, line)) {
    throw Error(ErrorCode::kEmptyCorpus, "empty corpus: no header row");
  }
  std::unordered_map<std::string, std::size_t> columns;
  for (std::size_t i = 0; i < row.size(); ++i) {
    columns.emplace(lower_ascii(trim(row[i])), i);
  }
  for (const char* required : {"id", "title", "abstract"}) {
    if (!columns.count(required)) {
      throw Error(ErrorCode::kMissingColumn, std::string("missing column: ") + required);
    }
  }
  auto column = [&](const char* name) -> std::optional<std::size_t> {
    auto it = columns.find(name);
    if (it == columns.end()) return std::nullopt;
    return it->second;
  };
  const auto c_id = *column("id");
  const auto c_title = *column("title");
  const auto c_abstract = *column("abstract");
  const auto c_keywords = column("keywords");
  const auto c_year = column("year");
  const auto c_type = column("publication_type");
  const auto c_source = column("source");

  Corpus corpus;
  while (reader.next(row, line)) {
    auto cell = [&](std::optional<std::size_t> idx) -> std::string_view {
      if (!idx || *idx >= row.size()) return {};
      return row[*idx];
    };
    if (row.size() > columns.size()) {
      throw Error(ErrorCode::kParseError,
                  "line " + std::to_string(line) + ": " + std::to_string(row.size()) +
                      " fields, header has " + std::to_string(columns.size()));
    }
    Document doc;
    doc.id = std::string(trim(cell(c_id)));
    doc.title = std::string(trim(cell(c_title)));
    doc.abstract = std::string(trim(cell(c_abstract)));
    doc.keywords = split_keywords(cell(c_keywords));
    doc.year = parse_year(cell(c_year));
    doc.publication_type = optional_text(cell(c_type));
    doc.source = optional_text(cell(c_source));
    add_row(corpus, std::move(doc));
  }
  return corpus;
}

}  // namespace

void to_json(nlohmann::json& j, const Document& doc) {
  j = nlohmann::json{{"id", doc.id},
                     {"title", doc.title},
                     {"abstract", doc.abstract},
                     {"keywords", doc.keywords}};
  j["year"] = doc.year ? nlohmann::json(*doc.year) : nlohmann::json(nullptr);
  j["publication_type"] =
      doc.publication_type ? nlohmann::json(*doc.publication_type) : nlohmann::json(nullptr);
  j["source"] = doc.source ? nlohmann::json(*doc.source) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Document& doc) {
  auto text = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (it->is_string()) return it->get<std::string>();
    return it->dump();
  };
  doc.id = std::string(trim(text("id")));
  doc.title = std::string(trim(text("title")));
  doc.abstract = std::string(trim(text("abstract")));
  doc.keywords.clear();
  if (auto it = j.find("keywords"); it != j.end()) {
    if (it->is_array()) {
      for (const auto& kw : *it) {
        if (kw.is_string() && !trim(kw.get_ref<const std::string&>()).empty()) {
          doc.keywords.emplace_back(trim(kw.get_ref<const std::string&>()));
        }
      }
    } else if (it->is_string()) {
      doc.keywords = split_keywords(it->get_ref<const std::string&>());
    }
  }
  doc.year.reset();
  if (auto it = j.find("year"); it != j.end()) {
    if (it->is_number_integer()) {
      doc.year = it->get<int>();
    } else if (it->is_string()) {
      doc.year = parse_year(it->get_ref<const std::string&>());
    }
  }
  doc.publication_type = optional_text(text("publication_type"));
  doc.source = optional_text(text("source"));
}

Corpus::Corpus(std::vector<Document> docs) {
  for (auto& d : docs) {
    if (!add(std::move(d))) note_duplicate();
  }
}

bool Corpus::contains(std::string_view id) const {
  return index_.find(std::string(id)) != index_.end();
}

const Document& Corpus::at(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) {
    throw Error(ErrorCode::kUnknownDocument, "unknown document: " + std::string(id));
  }
  return docs_[it->second];
}

std::optional<std::size_t> Corpus::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Corpus::add(Document doc) {
  if (index_.count(doc.id)) return false;
  index_.emplace(doc.id, docs_.size());
  docs_.push_back(std::move(doc));
  return true;
}

InputFormat parse_format(std::string_view name) {
  if (name == "csv") return InputFormat::kCsv;
  if (name == "jsonl") return InputFormat::kJsonl;
  throw Error(ErrorCode::kInvalidArgument, "unknown format: " + std::string(name));
}

Corpus ingest_jsonl(std::string_view content) {
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool checked_keys = false;
  while (start < content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    auto line = trim(content.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParseError,
                  "line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) {
      throw Error(ErrorCode::kParseError,
                  "line " + std::to_string(line_no) + ": expected a JSON object");
    }
    if (!checked_keys) {
      for (const char* required : {"id", "title", "abstract"}) {
        if (!j.contains(required)) {
          throw Error(ErrorCode::kMissingColumn, std::string("missing column: ") + required);
        }
      }
      checked_keys = true;
    }
    add_row(corpus, j.get<Document>());
  }
  return corpus;
}

Corpus ingest(const std::filesystem::path& path, InputFormat format) {
  const std::string content = read_file(path);
  Corpus corpus = format == InputFormat::kCsv ? ingest_csv(content) : ingest_jsonl(content);
  if (corpus.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "empty corpus: " + path.string());
  }
  return corpus;
}

std::string merge_title_abstract(const Document& doc) {
  auto title = trim(doc.title);
  auto abstract = trim(doc.abstract);
  if (title.empty() && abstract.empty()) {
    throw Error(ErrorCode::kInvalidDocument,
                "document " + doc.id + " has neither title nor abstract");
  }
  if (title.empty()) return std::string(abstract);
  std::string out(title);
  if (!is_terminal(out.back())) out.push_back('.');
  if (!abstract.empty()) {
    out.push_back(' ');
    out.append(abstract);
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_terminal(text[i]) && i + 1 < text.size() &&
        std::isspace(static_cast<unsigned char>(text[i + 1]))) {
      auto piece = trim(text.substr(start, i + 1 - start));
      if (!piece.empty()) out.emplace_back(piece);
      start = i + 1;
    }
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

double non_ascii_letter_fraction(std::string_view sentence) {
  std::size_t ascii_letters = 0;
  std::size_t other_letters = 0;
  std::size_t i = 0;
  while (i < sentence.size()) {
    const auto c = static_cast<unsigned char>(sentence[i]);
    if (c < 0x80) {
      if (std::isalpha(c)) ++ascii_letters;
      ++i;
      continue;
    }
    std::size_t len = (c >= 0xF0) ? 4 : (c >= 0xE0) ? 3 : (c >= 0xC0) ? 2 : 1;
    char32_t cp = len == 1 ? c : (c & (0xFF >> (len + 1)));
    for (std::size_t k = 1; k < len && i + k < sentence.size(); ++k) {
      cp = (cp << 6) | (static_cast<unsigned char>(sentence[i + k]) & 0x3F);
    }
    i += len;
    // Latin-1 symbols, general punctuation, CJK and full-width punctuation
    // are not letters.
    const bool symbol = (cp >= 0xA0 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7 ||
                        (cp >= 0x2000 && cp <= 0x2BFF) || (cp >= 0x3000 && cp <= 0x303F) ||
                        (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20);
    if (!symbol) ++other_letters;
  }
  const auto letters = ascii_letters + other_letters;
  if (letters == 0) return 0.0;
  return static_cast<double>(other_letters) / static_cast<double>(letters);
}

SentenceFilter non_ascii_majority_filter(double max_fraction) {
  return {"non_ascii_majority", [max_fraction](std::string_view s) {
            return non_ascii_letter_fraction(s) <= max_fraction;
          }};
}

SentenceFilter boilerplate_filter() {
  return {"boilerplate", [](std::string_view s) {
            if (s.find("\xC2\xA9") != std::string_view::npos) return false;
            const auto lowered = lower_ascii(s);
            return lowered.find("copyright") == std::string::npos &&
                   lowered.find("all rights reserved") == std::string::npos;
          }};
}

std::vector<SentenceFilter> default_filters() {
  return {non_ascii_majority_filter(), boilerplate_filter()};
}

ScreeningText preprocess(std::string_view doc_id, std::string_view raw,
                         const std::vector<SentenceFilter>& filters) {
  if (trim(raw).empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "document " + std::string(doc_id) + ": empty text");
  }
  ScreeningText out;
  out.doc_id = std::string(doc_id);
  for (auto& sentence : split_sentences(raw)) {
    const bool keep = std::all_of(filters.begin(), filters.end(),
                                  [&](const SentenceFilter& f) { return f.keep(sentence); });
    if (!keep) {
      ++out.dropped_sentence_count;
      continue;
    }
    if (!out.text.empty()) out.text.push_back(' ');
    out.text.append(sentence);
    ++out.sentence_count;
  }
  out.all_dropped = out.sentence_count == 0;
  return out;
}

std::vector<ScreeningText> prepare_texts(const Corpus& corpus,
                                         const std::vector<SentenceFilter>& filters) {
  std::vector<ScreeningText> out;
  out.reserve(corpus.size());
  for (const auto& doc : corpus.documents()) {
    out.push_back(preprocess(doc.id, merge_title_abstract(doc), filters));
  }
  return out;
}

void write_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& doc : corpus.documents()) out << nlohmann::json(doc).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace triage
