#pragma once

// Line-delimited JSON step traces and a text rendition of expert switching.
//
// One object per line:
//   {"step":0,"token":12,"text":"paris","winner":1,"winner_doc":"d7",
//    "experts":[{"doc":"d3","relevance":0.61,"top_token":9,
//                "top_score":3.2}, ...],
//    "betas":[0.41, ...]}

#include <iosfwd>
#include <string>
#include <vector>

#include "pced/decoder.hpp"

namespace pced {

struct TraceRecord {
  std::size_t step = 0;
  TokenId token = 0;
  std::string text;
  std::size_t winner = 0;
  std::string winner_doc;
  std::vector<std::string> docs;
  std::vector<double> relevance;
  std::vector<TokenId> top_tokens;
  std::vector<double> top_scores;
  std::vector<double> betas;
};

std::vector<TraceRecord> to_records(const DecodeResult& result,
                                    const Vocabulary& vocabulary);

void write_trace_jsonl(std::ostream& out,
                       const std::vector<TraceRecord>& records);
// Throws DomainError on malformed lines.
std::vector<TraceRecord> read_trace_jsonl(std::istream& in);

// One row per expert, one column per step, '#' where the expert won.
std::string render_trace_plot(const std::vector<TraceRecord>& records);

// Step indices at which the winning expert differs from the previous step.
std::vector<std::size_t> expert_switches(
    const std::vector<TraceRecord>& records);

}  // namespace pced
