#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace triage {

/// One bibliographic record.
struct Document {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<std::string> keywords;
  std::optional<int> year;
  std::optional<std::string> publication_type;
  std::optional<std::string> source;

  bool operator==(const Document&) const = default;
};

void to_json(nlohmann::json& j, const Document& doc);
void from_json(const nlohmann::json& j, Document& doc);

/// Cleaned model input for one document.
struct ScreeningText {
  std::string doc_id;
  std::string text;
  std::size_t sentence_count = 0;
  std::size_t dropped_sentence_count = 0;
  // Set when every parsed sentence was filtered out. The document stays
  // screenable by humans; only the model sees an empty string.
  bool all_dropped = false;

  bool operator==(const ScreeningText&) const = default;
};

/// Ordered, id-unique collection of documents.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs);

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  bool contains(std::string_view id) const;
  const Document& at(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;

  /// Appends a document; returns false (and leaves the corpus unchanged)
  /// when the id is already present.
  bool add(Document doc);

  std::size_t duplicate_count() const { return duplicates_; }
  std::size_t skipped_rows() const { return skipped_; }
  void note_duplicate() { ++duplicates_; }
  void note_skipped() { ++skipped_; }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t duplicates_ = 0;
  std::size_t skipped_ = 0;
};

enum class InputFormat { kCsv, kJsonl };

InputFormat parse_format(std::string_view name);

/// Reads a CSV or JSONL file. Duplicate ids keep the first occurrence and are
/// counted; rows with an empty id or with both title and abstract empty are
/// skipped and counted.
Corpus ingest(const std::filesystem::path& path, InputFormat format);

/// Same as ingest() for JSONL content already in memory.
Corpus ingest_jsonl(std::string_view content);

/// Title placed in front of the abstract as its first sentence.
std::string merge_title_abstract(const Document& doc);

/// A named keep/drop predicate over one sentence.
struct SentenceFilter {
  std::string name;
  std::function<bool(std::string_view)> keep;
};

/// Splits on '.', '!' or '?' followed by whitespace. Pieces are trimmed and
/// empty pieces discarded.
std::vector<std::string> split_sentences(std::string_view text);

/// Fraction of letters that are outside ASCII, by code point.
double non_ascii_letter_fraction(std::string_view sentence);

SentenceFilter non_ascii_majority_filter(double max_fraction = 0.5);
SentenceFilter boilerplate_filter();
std::vector<SentenceFilter> default_filters();

ScreeningText preprocess(std::string_view doc_id, std::string_view raw,
                         const std::vector<SentenceFilter>& filters);

/// merge + preprocess for every document, in corpus order.
std::vector<ScreeningText> prepare_texts(
    const Corpus& corpus, const std::vector<SentenceFilter>& filters);

/// Writes the corpus as JSONL (one Document per line).
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace triage
