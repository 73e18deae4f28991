// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fabricnet/data_io.hpp"

namespace fabricnet {

std::optional<std::size_t> LabelVocabulary::index_of(std::string_view name) const {
  const auto it = std::lower_bound(names.begin(), names.end(), name);
  if (it == names.end() || *it != name) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

LabelMatrix Manifest::label_matrix() const {
  LabelMatrix out(rows.size(), vocabulary.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c : rows[r].labels) out(r, c) = 1;
  }
  return out;
}

namespace {

[[noreturn]] void row_error(std::size_t line, const std::string& what) {
  throw DataError(DataError::Kind::kMalformedRow, "manifest line " + std::to_string(line) + ": " + what);
}

// Returns false on a malformed sequence.
bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      if (i + k >= s.size()) return false;
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

// Splits one CSV record into fields; handles double-quoted fields.
std::vector<std::string> split_record(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      if (!fields.back().empty() || was_quoted) row_error(line_no, "unexpected quote");
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
      was_quoted = false;
    } else {
      if (was_quoted) row_error(line_no, "text after closing quote");
      fields.back() += c;
    }
  }
  if (quoted) row_error(line_no, "unterminated quote");
  return fields;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  if (text.size() >= 2 && ((text[0] == '\xFF' && text[1] == '\xFE') || (text[0] == '\xFE' && text[1] == '\xFF'))) {
    throw DataError(DataError::Kind::kEncoding, "manifest is UTF-16 encoded; expected UTF-8");
  }
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  if (!valid_utf8(text)) throw DataError(DataError::Kind::kEncoding, "manifest is not valid UTF-8");

  struct RawRow {
    std::string path;
    std::vector<std::string> labels;
    std::size_t line;
  };
  std::vector<RawRow> raw;
  std::set<std::string> names;
  std::set<std::string> paths;
  bool header_seen = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto fields = split_record(line, line_no);
    if (!header_seen) {
      if (fields.size() != 2 || trim(fields[0]) != "path" || trim(fields[1]) != "labels") {
        row_error(line_no, "expected header 'path,labels'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 2) row_error(line_no, "expected 2 fields, got " + std::to_string(fields.size()));
    RawRow row{trim(fields[0]), {}, line_no};
    if (row.path.empty()) row_error(line_no, "empty path");
    std::set<std::string> seen;
    std::stringstream labels(fields[1]);
    std::string name;
    while (std::getline(labels, name, ';')) {
      name = trim(name);
      if (name.empty()) continue;
      if (seen.insert(name).second) row.labels.push_back(name);
    }
    if (row.labels.empty()) row_error(line_no, "empty label list");
    if (!paths.insert(row.path).second) {
      throw DataError(DataError::Kind::kDuplicate,
                      "manifest line " + std::to_string(line_no) + ": duplicate path '" + row.path + "'");
    }
    names.insert(row.labels.begin(), row.labels.end());
    raw.push_back(std::move(row));
  }
  if (!header_seen) row_error(1, "missing header 'path,labels'");

  Manifest out;
  out.vocabulary.names.assign(names.begin(), names.end());
  for (auto& r : raw) {
    ManifestRow row;
    const std::filesystem::path p(r.path);
    row.path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    row.line = r.line;
    for (const auto& n : r.labels) row.labels.push_back(*out.vocabulary.index_of(n));
    std::sort(row.labels.begin(), row.labels.end());
    out.rows.push_back(std::move(row));
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot open manifest '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw DataError(DataError::Kind::kIo, "error reading manifest '" + path.string() + "'");
  return parse_manifest(buffer.str(), path.parent_path());
}

Dataset load_dataset(const Manifest& manifest, std::size_t size) {
  if (manifest.rows.empty()) throw DataError(DataError::Kind::kMalformedRow, "manifest has no samples");
  Dataset out;
  out.height = size;
  out.width = size;
  out.channels = 3;
  out.vocabulary = manifest.vocabulary.names;
  out.labels = manifest.label_matrix();
  out.pixels.reserve(manifest.rows.size() * size * size * 3);
  for (const auto& row : manifest.rows) {
    const Tensor img = decode_image(row.path, size);
    out.pixels.insert(out.pixels.end(), img.data().begin(), img.data().end());
  }
  return out;
}

}  // namespace fabricnet
