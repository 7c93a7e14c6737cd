#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/csv.hpp"
#include "cebench/jsonl.hpp"

namespace cebench {

enum class NliLabel { entailment, contradiction, neutral, invalid };

inline std::string to_string(NliLabel l) {
  switch (l) {
    case NliLabel::entailment: return "entailment";
    case NliLabel::contradiction: return "contradiction";
    case NliLabel::neutral: return "neutral";
    case NliLabel::invalid: return "invalid";
  }
  return "invalid";
}

inline std::optional<NliLabel> nli_label_from_string(std::string_view s) {
  std::string t(s);
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (t == "entailment") return NliLabel::entailment;
  if (t == "contradiction") return NliLabel::contradiction;
  if (t == "neutral") return NliLabel::neutral;
  return std::nullopt;
}

struct Label {
  enum class Kind { none, score, nli };
  Kind kind = Kind::none;
  int score = 0;
  NliLabel nli = NliLabel::invalid;

  std::string to_display() const {
    switch (kind) {
      case Kind::score: return std::to_string(score);
      case Kind::nli: return cebench::to_string(nli);
      case Kind::none: return "";
    }
    return "";
  }
};

struct PromptRecord {
  std::string id;
  std::string query;
  Label label;
};

struct Chunk {
  std::string id;
  std::string source_path;
  std::size_t start_offset = 0;  // in unicode scalar values
  std::string text;
};

// ---- UTF-8 helpers ---------------------------------------------------------

// Byte offsets of each code point start, plus one-past-the-end sentinel.
inline std::vector<std::size_t> utf8_boundaries(std::string_view s) {
  std::vector<std::size_t> bounds;
  bounds.reserve(s.size() + 1);
  std::size_t i = 0;
  while (i < s.size()) {
    bounds.push_back(i);
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t step = 1;
    if (c >= 0xf0) step = 4;
    else if (c >= 0xe0) step = 3;
    else if (c >= 0xc0) step = 2;
    i = std::min(i + step, s.size());
  }
  bounds.push_back(s.size());
  return bounds;
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xc0) != 0x80) ++n;
  }
  return n;
}

// ---- Prompt rendering ------------------------------------------------------

inline std::string replace_all(std::string text, std::string_view what,
                               std::string_view with) {
  std::size_t pos = 0;
  while ((pos = text.find(what, pos)) != std::string::npos) {
    text.replace(pos, what.size(), with);
    pos += with.size();
  }
  return text;
}

// Literal placeholder substitution for {query} and optionally {context}.
// Single pass over the template: replacement text is never rescanned, so
// queries containing placeholder tokens stay inert.
inline std::string render_template(const std::string& tmpl,
                                   std::string_view query,
                                   std::optional<std::string_view> context) {
  if (tmpl.find("{context}") != std::string::npos && !context) {
    throw std::invalid_argument(
        "template contains {context} but no context was supplied");
  }
  std::string out;
  out.reserve(tmpl.size() + query.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 7, "{query}") == 0) {
      out += query;
      i += 7;
    } else if (tmpl.compare(i, 9, "{context}") == 0) {
      out += *context;
      i += 9;
    } else {
      out.push_back(tmpl[i]);
      ++i;
    }
  }
  return out;
}

inline std::string escape_newlines(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\n') out += "\\n";
    else out.push_back(c);
  }
  return out;
}

// One escaped prompt per line; internal newlines become the two chars \n.
inline std::string render_prompts(
    const std::string& tmpl, const std::vector<PromptRecord>& records,
    const std::optional<std::vector<std::string>>& context_per_record =
        std::nullopt) {
  if (tmpl.find("{query}") == std::string::npos) {
    throw std::invalid_argument("template is missing the {query} placeholder");
  }
  bool wants_context = tmpl.find("{context}") != std::string::npos;
  if (wants_context) {
    if (!context_per_record) {
      throw std::invalid_argument(
          "template contains {context} but no context was supplied");
    }
    if (context_per_record->size() != records.size()) {
      throw std::invalid_argument("context list length does not match records");
    }
  }
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::optional<std::string_view> ctx;
    if (wants_context) ctx = (*context_per_record)[i];
    out += escape_newlines(render_template(tmpl, records[i].query, ctx));
    out.push_back('\n');
  }
  return out;
}

// ---- Chunking --------------------------------------------------------------

// Fixed-offset slices counted in unicode scalar values. Chunk i starts at
// i*(chunk_size-overlap); a chunk is emitted only while it contributes text
// beyond the previous chunk's tail, so chunk count is
// ceil(max(len-overlap,0)/(chunk_size-overlap)).
inline std::vector<Chunk> chunk_document(std::string_view text,
                                         std::size_t chunk_size,
                                         std::size_t overlap = 0,
                                         const std::string& source_path = "") {
  if (chunk_size == 0) throw std::invalid_argument("chunk_size must be >= 1");
  if (overlap >= chunk_size) {
    throw std::invalid_argument("overlap must be smaller than chunk_size");
  }
  std::vector<Chunk> chunks;
  if (text.empty()) return chunks;
  const std::vector<std::size_t> bounds = utf8_boundaries(text);
  const std::size_t len = bounds.size() - 1;  // code points
  const std::size_t stride = chunk_size - overlap;
  for (std::size_t i = 0, start = 0; start + overlap < len;
       ++i, start = i * stride) {
    std::size_t end = std::min(start + chunk_size, len);
    Chunk c;
    c.source_path = source_path;
    c.start_offset = start;
    c.id = source_path + "#" + std::to_string(i);
    c.text.assign(text.substr(bounds[start], bounds[end] - bounds[start]));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

// ---- Dataset loading -------------------------------------------------------

enum class DatasetFormat { csv, jsonl };

inline DatasetFormat dataset_format_from_path(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "csv") return DatasetFormat::csv;
  if (ext == "jsonl") return DatasetFormat::jsonl;
  throw std::runtime_error("cannot infer dataset format from path: " + path);
}

namespace detail {

inline Label parse_label(const std::string& raw, const std::string& kind,
                         std::size_t rowno) {
  Label label;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("dataset row " + std::to_string(rowno) + ": " +
                             what);
  };
  auto parse_score = [&]() {
    try {
      std::size_t used = 0;
      int v = std::stoi(raw, &used);
      if (used != raw.size()) fail("unparseable score label '" + raw + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("unparseable score label '" + raw + "'");
      return 0;
    }
  };
  if (kind == "score") {
    label.kind = Label::Kind::score;
    label.score = parse_score();
  } else if (kind == "nli") {
    auto nli = nli_label_from_string(raw);
    if (!nli) fail("unparseable nli label '" + raw + "'");
    label.kind = Label::Kind::nli;
    label.nli = *nli;
  } else if (kind == "none" || kind.empty()) {
    if (kind == "none" || raw.empty()) return label;
    // No declared kind: infer integer first, then class name.
    if (raw.find_first_not_of("-0123456789") == std::string::npos) {
      label.kind = Label::Kind::score;
      label.score = parse_score();
    } else if (auto nli = nli_label_from_string(raw)) {
      label.kind = Label::Kind::nli;
      label.nli = *nli;
    } else {
      fail("unparseable label '" + raw + "'");
    }
  } else {
    fail("unknown label_kind '" + kind + "'");
  }
  return label;
}

}  // namespace detail

inline std::vector<PromptRecord> load_dataset(const std::string& path,
                                              DatasetFormat format) {
  std::vector<PromptRecord> records;
  std::set<std::string> seen_ids;
  auto add = [&](PromptRecord r, std::size_t rowno) {
    if (r.id.empty()) r.id = "row-" + std::to_string(rowno);
    if (!seen_ids.insert(r.id).second) {
      throw std::runtime_error("dataset row " + std::to_string(rowno) +
                               ": duplicate prompt id '" + r.id + "'");
    }
    records.push_back(std::move(r));
  };

  if (format == DatasetFormat::csv) {
    auto rows = load_csv(path);
    if (rows.empty()) return records;
    const auto& header = rows[0];
    auto col = [&](std::string_view name) -> std::optional<std::size_t> {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
      }
      return std::nullopt;
    };
    auto query_col = col("query");
    if (!query_col) throw std::runtime_error(path + ": missing query column");
    auto id_col = col("id");
    auto label_col = col("label");
    auto kind_col = col("label_kind");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& row = rows[i];
      auto cell = [&](std::optional<std::size_t> c) -> std::string {
        return c && *c < row.size() ? row[*c] : "";
      };
      PromptRecord r;
      if (*query_col >= row.size()) {
        throw std::runtime_error(path + " row " + std::to_string(i) +
                                 ": missing query field");
      }
      r.id = cell(id_col);
      r.query = row[*query_col];
      r.label = detail::parse_label(cell(label_col), cell(kind_col), i);
      add(std::move(r), i);
    }
  } else {
    auto file = read_jsonl(path);
    std::size_t rowno = 0;
    for (const auto& j : file.rows) {
      ++rowno;
      if (!j.is_object() || !j.contains("query")) {
        throw std::runtime_error(path + " row " + std::to_string(rowno) +
                                 ": missing query field");
      }
      PromptRecord r;
      r.id = j.value("id", "");
      r.query = j.at("query").get<std::string>();
      std::string raw;
      if (j.contains("label") && !j.at("label").is_null()) {
        const auto& l = j.at("label");
        raw = l.is_string() ? l.get<std::string>() : l.dump();
      }
      r.label = detail::parse_label(raw, j.value("label_kind", ""), rowno);
      add(std::move(r), rowno);
    }
  }
  return records;
}

inline std::vector<PromptRecord> load_dataset(const std::string& path) {
  return load_dataset(path, dataset_format_from_path(path));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace cebench
