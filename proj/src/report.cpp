#include "zhmt/report.hpp"

#include <sstream>

#include "zhmt/errors.hpp"

namespace zhmt {

namespace {

void merge_counts(PipelineReport::Counts& into, const PipelineReport::Counts& from) {
  into.inputs += from.inputs;
  into.outputs += from.outputs;
  for (const auto& [k, v] : from.rejected) into.rejected[k] += v;
}

void write_counts(std::ostream& out, const std::string& prefix, const PipelineReport::Counts& c) {
  out << prefix << "inputs\t" << c.inputs << "\n";
  out << prefix << "outputs\t" << c.outputs << "\n";
  for (const auto& [stage, n] : c.rejected) out << prefix << "rejected." << stage << "\t" << n << "\n";
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace

PipelineReport::PipelineReport(const std::vector<std::string>& stages) {
  for (const auto& s : stages) totals.rejected[s] = 0;
}

void PipelineReport::add_input(const std::string& pair) {
  ++totals.inputs;
  if (!pair.empty()) ++pairs[pair].inputs;
}

void PipelineReport::add_output(const std::string& pair) {
  ++totals.outputs;
  if (!pair.empty()) ++pairs[pair].outputs;
}

void PipelineReport::add_rejection(const FilterVerdict& v, const std::string& pair) {
  ++totals.rejected[v.stage];
  ++reasons[v.reason];
  if (!pair.empty()) ++pairs[pair].rejected[v.stage];
}

std::size_t PipelineReport::total_rejections() const {
  std::size_t n = 0;
  for (const auto& [_, v] : totals.rejected) n += v;
  return n;
}

std::size_t PipelineReport::rejected(const std::string& stage) const {
  auto it = totals.rejected.find(stage);
  return it == totals.rejected.end() ? 0 : it->second;
}

bool PipelineReport::balanced() const { return totals.inputs == totals.outputs + total_rejections(); }

PipelineReport& PipelineReport::merge(const PipelineReport& other) {
  merge_counts(totals, other.totals);
  for (const auto& [k, v] : other.reasons) reasons[k] += v;
  for (const auto& [k, v] : other.pairs) merge_counts(pairs[k], v);
  for (const auto& [k, v] : other.extra) extra[k] += v;
  return *this;
}

std::string PipelineReport::to_text() const {
  std::ostringstream out;
  write_counts(out, "", totals);
  for (const auto& [reason, n] : reasons) out << "reason." << reason << "\t" << n << "\n";
  for (const auto& [k, v] : extra) out << "extra." << k << "\t" << v << "\n";
  for (const auto& [pair, c] : pairs) write_counts(out, "pair." + pair + ".", c);
  return out.str();
}

PipelineReport PipelineReport::parse(std::string_view text) {
  PipelineReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError("report line without a tab: " + line);
    const std::string key = line.substr(0, tab);
    const std::size_t value = std::stoull(line.substr(tab + 1));
    auto apply = [&](Counts& c, std::string_view k) {
      if (k == "inputs") c.inputs = value;
      else if (k == "outputs") c.outputs = value;
      else if (starts_with(k, "rejected.")) c.rejected[std::string(k.substr(9))] = value;
      else throw ConfigError("unknown report key: " + key);
    };
    std::string_view k = key;
    if (starts_with(k, "reason.")) {
      r.reasons[std::string(k.substr(7))] = value;
    } else if (starts_with(k, "extra.")) {
      r.extra[std::string(k.substr(6))] = value;
    } else if (starts_with(k, "pair.")) {
      k.remove_prefix(5);
      // Pair keys look like "en-zh"; the counter name follows the first '.'.
      const auto dot = k.find('.');
      if (dot == std::string_view::npos) throw ConfigError("bad pair key: " + key);
      apply(r.pairs[std::string(k.substr(0, dot))], k.substr(dot + 1));
    } else {
      apply(r.totals, k);
    }
  }
  return r;
}

}  // namespace zhmt
