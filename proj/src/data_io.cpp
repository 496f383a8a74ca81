#include "perturbqe/data_io.hpp"

#include <fstream>
#include <sstream>

#include "perturbqe/errors.hpp"

namespace pqe {

bool QEDataset::has_gold() const {
  return !sentences.empty() && sentences.front().gold.has_value();
}

bool QEDataset::has_mask() const {
  return !sentences.empty() && sentences.front().mask.has_value();
}

std::vector<std::string> QEDataset::ids() const {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(s.id);
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string content = read_text_file(path);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    std::string line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

Labels parse_tag_line(std::string_view line, std::size_t token_count, std::string_view sentence_id) {
  const Tokens fields = split_whitespace(line);
  Labels tags;
  tags.reserve(fields.size());
  for (const auto& f : fields) {
    if (f == "OK") tags.push_back(QualityLabel::OK);
    else if (f == "BAD") tags.push_back(QualityLabel::BAD);
    else throw DataError("sentence " + std::string(sentence_id) + ": unknown tag '" + f + "'");
  }
  if (tags.size() == token_count) return tags;
  if (tags.size() == 2 * token_count + 1) {
    // gap, word, gap, word, ..., gap
    Labels words;
    words.reserve(token_count);
    for (std::size_t i = 1; i < tags.size(); i += 2) words.push_back(tags[i]);
    return words;
  }
  throw DataError("sentence " + std::string(sentence_id) + ": " + std::to_string(tags.size()) +
                  " tags for " + std::to_string(token_count) + " MT tokens");
}

std::set<std::size_t> parse_mask_line(std::string_view line, std::size_t token_count,
                                      std::string_view sentence_id) {
  const Tokens fields = split_whitespace(line);
  if (fields.size() != token_count) {
    throw DataError("sentence " + std::string(sentence_id) + ": " + std::to_string(fields.size()) +
                    " mask flags for " + std::to_string(token_count) + " MT tokens");
  }
  std::set<std::size_t> mask;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i] == "1") mask.insert(i);
    else if (fields[i] != "0") {
      throw DataError("sentence " + std::string(sentence_id) + ": mask flag must be 0 or 1, got '" +
                      fields[i] + "'");
    }
  }
  return mask;
}

namespace {

void check_line_count(const std::vector<std::string>& lines, std::size_t expected,
                      const std::filesystem::path& path, const std::filesystem::path& src) {
  if (lines.size() == expected) return;
  const std::size_t first_bad = std::min(lines.size(), expected) + 1;
  throw DataError(path.string() + " has " + std::to_string(lines.size()) + " lines but " +
                  src.string() + " has " + std::to_string(expected) + " (first unmatched line " +
                  std::to_string(first_bad) + ")");
}

}  // namespace

QEDataset load_dataset(const DatasetPaths& paths) {
  const auto src = read_lines(paths.src);
  const auto mt = read_lines(paths.mt);
  check_line_count(mt, src.size(), paths.mt, paths.src);

  std::optional<std::vector<std::string>> tags, mask;
  std::optional<std::vector<std::vector<PosTag>>> pos;
  if (paths.tags) {
    tags = read_lines(*paths.tags);
    check_line_count(*tags, src.size(), *paths.tags, paths.src);
  }
  if (paths.mask) {
    mask = read_lines(*paths.mask);
    check_line_count(*mask, src.size(), *paths.mask, paths.src);
  }
  if (paths.pos) {
    const auto lines = read_lines(*paths.pos);
    check_line_count(lines, src.size(), *paths.pos, paths.src);
    pos = parse_pos_lines(lines);
  }

  const Segmentation seg = paths.mt_pretokenized ? Segmentation::Whitespace : paths.segmentation;
  QEDataset dataset;
  dataset.sentences.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    QESentence s;
    s.id = std::to_string(i);
    s.source_text = src[i];
    s.source_tokens = tokenize_words(src[i]);
    s.mt_text = mt[i];
    s.mt_tokens = segment_target(mt[i], seg);
    if (tags) s.gold = parse_tag_line((*tags)[i], s.mt_tokens.size(), s.id);
    if (mask) s.mask = parse_mask_line((*mask)[i], s.mt_tokens.size(), s.id);
    if (pos) {
      if ((*pos)[i].size() != s.source_tokens.size()) {
        throw DataError("sentence " + s.id + ": " + std::to_string((*pos)[i].size()) +
                        " POS tags for " + std::to_string(s.source_tokens.size()) +
                        " source tokens");
      }
      s.pos = std::move((*pos)[i]);
    }
    dataset.sentences.push_back(std::move(s));
  }
  return dataset;
}

void write_predictions(std::span<const Labels> labels, const std::filesystem::path& path) {
  std::string content;
  for (const auto& line : labels) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) content += ' ';
      content += to_string(line[i]);
    }
    content += '\n';
  }
  write_text_file(path, content);
}

std::vector<Labels> read_predictions(const std::filesystem::path& path) {
  std::vector<Labels> out;
  for (const auto& line : read_lines(path)) {
    Labels labels;
    for (const auto& f : split_whitespace(line)) {
      try {
        labels.push_back(quality_label_from_string(f));
      } catch (const InvalidInput& e) {
        throw DataError(path.string() + ": " + e.what());
      }
    }
    out.push_back(std::move(labels));
  }
  return out;
}

Labels labels_of(std::span<const WordVerdict> verdicts) {
  Labels out;
  out.reserve(verdicts.size());
  for (const auto& v : verdicts) out.push_back(v.label);
  return out;
}

ExplanationRecord make_explanation(std::string sentence_id, const Tokens& source_tokens,
                                   const Tokens& target_tokens,
                                   std::span<const WordVerdict> verdicts) {
  ExplanationRecord record;
  record.sentence_id = std::move(sentence_id);
  record.source_tokens = source_tokens;
  for (const auto& v : verdicts) {
    if (v.target_index >= target_tokens.size()) throw InternalError("verdict index out of range");
    ExplainedToken token;
    token.index = v.target_index;
    token.token = target_tokens[v.target_index];
    token.label = v.label;
    token.influence_count = v.influence_count;
    for (const auto& inf : v.influencers) {
      if (inf.source_index >= source_tokens.size()) throw InternalError("influencer index out of range");
      token.influencers.push_back({inf.source_index, source_tokens[inf.source_index], inf.variants});
    }
    record.tokens.push_back(std::move(token));
  }
  return record;
}

namespace {

nlohmann::json variant_json(const VariantCount& v) {
  nlohmann::json j;
  j["token"] = v.token ? nlohmann::json(*v.token) : nlohmann::json(nullptr);
  j["count"] = v.count;
  return j;
}

VariantCount variant_from_json(const nlohmann::json& j) {
  VariantCount v;
  if (!j.at("token").is_null()) v.token = j.at("token").get<std::string>();
  v.count = j.at("count").get<std::size_t>();
  return v;
}

}  // namespace

void to_json(nlohmann::json& j, const ExplanationRecord& r) {
  auto tokens = nlohmann::json::array();
  for (const auto& t : r.tokens) {
    auto influencers = nlohmann::json::array();
    for (const auto& inf : t.influencers) {
      auto variants = nlohmann::json::array();
      for (const auto& v : inf.variants) variants.push_back(variant_json(v));
      influencers.push_back({{"source_index", inf.source_index},
                             {"source_token", inf.source_token},
                             {"variants", std::move(variants)}});
    }
    tokens.push_back({{"index", t.index},
                      {"token", t.token},
                      {"label", to_string(t.label)},
                      {"influence_count", t.influence_count},
                      {"influencers", std::move(influencers)}});
  }
  j = nlohmann::json{{"sentence_id", r.sentence_id},
                     {"source_tokens", r.source_tokens},
                     {"tokens", std::move(tokens)}};
}

void from_json(const nlohmann::json& j, ExplanationRecord& r) {
  r = {};
  r.sentence_id = j.at("sentence_id").get<std::string>();
  r.source_tokens = j.at("source_tokens").get<Tokens>();
  for (const auto& t : j.at("tokens")) {
    ExplainedToken token;
    token.index = t.at("index").get<std::size_t>();
    token.token = t.at("token").get<std::string>();
    token.label = quality_label_from_string(t.at("label").get<std::string>());
    token.influence_count = t.at("influence_count").get<std::size_t>();
    for (const auto& inf : t.at("influencers")) {
      ExplainedInfluencer e;
      e.source_index = inf.at("source_index").get<std::size_t>();
      e.source_token = inf.at("source_token").get<std::string>();
      for (const auto& v : inf.at("variants")) e.variants.push_back(variant_from_json(v));
      token.influencers.push_back(std::move(e));
    }
    r.tokens.push_back(std::move(token));
  }
}

namespace {

std::string escape_html(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += ch;
    }
  }
  return out;
}

constexpr const char* kStyle = R"(body{font-family:sans-serif;margin:2em;color:#222}
section.sentence{border-top:1px solid #ccc;padding:1em 0}
.tok{padding:0 .15em;margin:0 .05em;border-radius:3px}
.tok.bad{background:#f4b6b6}
.src .tok{background:#eef}
table{border-collapse:collapse;margin:.4em 0 .8em 1.5em}
td,th{border:1px solid #bbb;padding:.15em .5em;text-align:left}
.empty{color:#888;font-style:italic}
h3{font-size:1em;margin:.6em 0 .2em})";

}  // namespace

std::string render_html(std::span<const ExplanationRecord> records) {
  std::string html;
  html += "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n";
  html += "<title>Word-level QE explanations</title>\n<style>\n";
  html += kStyle;
  html += "\n</style>\n</head>\n<body>\n<h1>Word-level QE explanations</h1>\n";
  if (records.empty()) html += "<p>No sentences.</p>\n";
  for (const auto& r : records) {
    html += "<section class=\"sentence\" data-sentence-id=\"" + escape_html(r.sentence_id) + "\">\n";
    html += "<h2>Sentence " + escape_html(r.sentence_id) + "</h2>\n<p class=\"src\">";
    for (std::size_t i = 0; i < r.source_tokens.size(); ++i) {
      html += "<span class=\"tok\" data-source-index=\"" + std::to_string(i) + "\">" +
              escape_html(r.source_tokens[i]) + "</span> ";
    }
    html += "</p>\n<p class=\"mt\">";
    for (const auto& t : r.tokens) {
      const bool bad = t.label == QualityLabel::BAD;
      html += "<span class=\"tok" + std::string(bad ? " bad" : "") + "\" data-index=\"" +
              std::to_string(t.index) + "\" data-label=\"" + to_string(t.label) +
              "\" data-influence=\"" + std::to_string(t.influence_count) + "\">" +
              escape_html(t.token) + "</span> ";
    }
    html += "</p>\n";
    for (const auto& t : r.tokens) {
      if (t.influencers.empty()) continue;
      html += "<div class=\"influence\" data-target-index=\"" + std::to_string(t.index) + "\">\n";
      html += "<h3>" + escape_html(t.token) + " (" + to_string(t.label) + ", " +
              std::to_string(t.influence_count) + " influencers)</h3>\n";
      html += "<table>\n<tr><th>source word</th><th>observed variants</th></tr>\n";
      for (const auto& inf : t.influencers) {
        html += "<tr data-source-index=\"" + std::to_string(inf.source_index) + "\"><td>" +
                escape_html(inf.source_token) + "</td><td>";
        for (std::size_t k = 0; k < inf.variants.size(); ++k) {
          if (k) html += ", ";
          const auto& v = inf.variants[k];
          if (v.token) html += escape_html(*v.token);
          else html += "<span class=\"empty\">(empty)</span>";
          html += " &times;" + std::to_string(v.count);
        }
        html += "</td></tr>\n";
      }
      html += "</table>\n</div>\n";
    }
    html += "</section>\n";
  }
  html += "</body>\n</html>\n";
  return html;
}

void emit_explanations(std::span<const ExplanationRecord> records, ReportFormat format,
                       const std::filesystem::path& path) {
  if (format == ReportFormat::Html) {
    write_text_file(path, render_html(records));
    return;
  }
  std::string content;
  for (const auto& r : records) content += nlohmann::json(r).dump() + "\n";
  write_text_file(path, content);
}

std::vector<ExplanationRecord> read_explanations(const std::filesystem::path& path) {
  std::vector<ExplanationRecord> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ExplanationRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": malformed explanation record: " + e.what());
    }
  }
  return out;
}

}  // namespace pqe
