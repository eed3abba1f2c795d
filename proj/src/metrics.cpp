#include "leapattn/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace leapattn {

namespace {

double discount_denominator(const RcpInputs& in) {
  const double denom = 1.0 + (in.sft_acc - in.ef_acc) / in.std_bench;
  if (denom <= 0.0)
    throw std::domain_error("rcp: accuracy gap exceeds the benchmark std; metric undefined");
  return denom;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const size_t a = field.find_first_not_of(" \t\r");
    const size_t b = field.find_last_not_of(" \t\r");
    fields.push_back(a == std::string::npos ? "" : field.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

void RcpInputs::validate() const {
  if (!(ef_thrpt > 0.0) || !(sft_thrpt > 0.0))
    throw std::invalid_argument("RcpInputs: throughputs must be positive");
  if (!(std_bench > 0.0)) throw std::invalid_argument("RcpInputs: std_bench must be positive");
  if (!(ef_mem > 0.0) || !(sft_mem > 0.0))
    throw std::invalid_argument("RcpInputs: memories must be positive");
}

double rcp(const RcpInputs& in) {
  in.validate();
  return (in.ef_thrpt / in.sft_thrpt) / discount_denominator(in);
}

double rcp_mem(const RcpInputs& in, double w_thrpt, double w_mem) {
  in.validate();
  if (w_thrpt < 0.0 || w_mem < 0.0) throw std::invalid_argument("rcp_mem: negative weight");
  const double blended = w_thrpt * (in.ef_thrpt / in.sft_thrpt) + w_mem * (in.sft_mem / in.ef_mem);
  return blended / discount_denominator(in);
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("sample_std: need at least two values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (values.size() - 1));
}

std::vector<MechanismRecord> parse_mechanism_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MechanismRecord> out;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_row(line);
    if (!header_seen) {
      if (fields.size() < 5 || fields[0] != "scheme")
        throw std::invalid_argument("mechanism csv: bad header");
      header_seen = true;
      continue;
    }
    if (fields.size() < 5 || fields.size() > 6)
      throw std::invalid_argument("mechanism csv: row needs 5 or 6 fields: " + line);
    MechanismRecord rec;
    rec.scheme = fields[0];
    try {
      rec.avg_acc = std::stod(fields[1]);
      rec.thrpt_1k = std::stod(fields[2]);
      rec.thrpt_2k = std::stod(fields[3]);
      rec.thrpt_4k = std::stod(fields[4]);
      if (fields.size() == 6 && !fields[5].empty()) rec.mem = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw std::invalid_argument("mechanism csv: non-numeric field: " + line);
    }
    out.push_back(std::move(rec));
  }
  if (!header_seen) throw std::invalid_argument("mechanism csv: empty input");
  return out;
}

std::vector<RcpRow> rcp_report(const std::vector<MechanismRecord>& records,
                               const std::string& baseline) {
  const MechanismRecord* base = nullptr;
  std::vector<double> accs;
  for (const MechanismRecord& r : records) {
    accs.push_back(r.avg_acc);
    if (r.scheme == baseline) base = &r;
  }
  if (!base) throw std::invalid_argument("rcp_report: baseline row missing: " + baseline);
  const double std_bench = sample_std(accs);
  std::vector<RcpRow> out;
  for (const MechanismRecord& r : records) {
    RcpInputs in;
    in.ef_thrpt = r.thrpt_4k;
    in.sft_thrpt = base->thrpt_4k;
    in.ef_acc = r.avg_acc;
    in.sft_acc = base->avg_acc;
    in.std_bench = std_bench;
    RcpRow row;
    row.scheme = r.scheme;
    row.rcp_value = rcp(in);
    if (r.mem > 0.0 && base->mem > 0.0) {
      in.ef_mem = r.mem;
      in.sft_mem = base->mem;
      row.rcp_mem_value = rcp_mem(in);
      row.has_mem = true;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string rcp_rows_to_csv(const std::vector<RcpRow>& rows) {
  std::ostringstream out;
  out << "scheme,rcp,rcp_mem\n";
  out.precision(9);
  for (const RcpRow& r : rows) {
    out << r.scheme << ',' << r.rcp_value << ',';
    if (r.has_mem) out << r.rcp_mem_value;
    out << '\n';
  }
  return out.str();
}

}  // namespace leapattn
