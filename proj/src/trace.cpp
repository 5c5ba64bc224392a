#include "pced/trace.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

namespace pced {

using nlohmann::json;

std::vector<TraceRecord> to_records(const DecodeResult& result,
                                    const Vocabulary& vocabulary) {
  std::vector<TraceRecord> out;
  out.reserve(result.traces.size());
  for (const auto& t : result.traces) {
    TraceRecord r;
    r.step = t.step;
    r.token = t.token;
    r.text = vocabulary.token_text(t.token);
    r.winner = t.winner;
    r.winner_doc = result.expert_labels.at(t.winner);
    r.docs = result.expert_labels;
    r.relevance = result.relevance;
    for (const auto& e : t.experts) {
      r.top_tokens.push_back(e.token);
      r.top_scores.push_back(e.score);
    }
    r.betas = t.betas;
    out.push_back(std::move(r));
  }
  return out;
}

void write_trace_jsonl(std::ostream& out,
                       const std::vector<TraceRecord>& records) {
  for (const auto& r : records) {
    json experts = json::array();
    for (std::size_t k = 0; k < r.docs.size(); ++k) {
      experts.push_back({{"doc", r.docs[k]},
                         {"relevance", r.relevance.at(k)},
                         {"top_token", r.top_tokens.at(k)},
                         {"top_score", r.top_scores.at(k)}});
    }
    json line = {{"step", r.step},         {"token", r.token},
                 {"text", r.text},         {"winner", r.winner},
                 {"winner_doc", r.winner_doc}, {"experts", experts},
                 {"betas", r.betas}};
    out << line.dump() << '\n';
  }
}

std::vector<TraceRecord> read_trace_jsonl(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      TraceRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.token = j.at("token").get<TokenId>();
      r.text = j.at("text").get<std::string>();
      r.winner = j.at("winner").get<std::size_t>();
      r.winner_doc = j.at("winner_doc").get<std::string>();
      for (const auto& e : j.at("experts")) {
        r.docs.push_back(e.at("doc").get<std::string>());
        r.relevance.push_back(e.at("relevance").get<double>());
        r.top_tokens.push_back(e.at("top_token").get<TokenId>());
        r.top_scores.push_back(e.at("top_score").get<double>());
      }
      r.betas = j.at("betas").get<std::vector<double>>();
      if (r.winner >= r.docs.size()) {
        throw DomainError("winner index out of range");
      }
      out.push_back(std::move(r));
    } catch (const json::exception& ex) {
      throw DomainError("trace line " + std::to_string(lineno) + ": " +
                        ex.what());
    } catch (const DomainError& ex) {
      throw DomainError("trace line " + std::to_string(lineno) + ": " +
                        ex.what());
    }
  }
  return out;
}

std::vector<std::size_t> expert_switches(
    const std::vector<TraceRecord>& records) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].winner_doc != records[i - 1].winner_doc) {
      out.push_back(records[i].step);
    }
  }
  return out;
}

std::string render_trace_plot(const std::vector<TraceRecord>& records) {
  std::ostringstream os;
  if (records.empty()) {
    os << "(empty trace)\n";
    return os.str();
  }
  const auto& docs = records.front().docs;
  std::vector<std::string> labels;
  std::size_t width = 0;
  for (std::size_t k = 0; k < docs.size(); ++k) {
    std::ostringstream l;
    l << docs[k] << " (r=" << std::fixed << std::setprecision(3)
      << records.front().relevance.at(k) << ")";
    labels.push_back(l.str());
    width = std::max(width, labels.back().size());
  }

  os << "expert trace: rows are experts, columns are steps, # marks the "
        "winning expert\n";
  os << std::setw(static_cast<int>(width)) << std::left << "step" << " |";
  for (const auto& r : records) os << ' ' << r.step % 10;
  os << '\n';
  for (std::size_t k = 0; k < docs.size(); ++k) {
    os << std::setw(static_cast<int>(width)) << std::left << labels[k] << " |";
    for (const auto& r : records) os << ' ' << (r.winner_doc == docs[k] ? '#' : '.');
    os << '\n';
  }
  os << "tokens:";
  for (const auto& r : records) os << ' ' << r.text;
  os << '\n';
  os << "switches: " << expert_switches(records).size();
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].winner_doc == records[i - 1].winner_doc) continue;
    os << " [step " << records[i].step << ": " << records[i - 1].winner_doc
       << " -> " << records[i].winner_doc << "]";
  }
  os << '\n';
  return os.str();
}

}  // namespace pced
