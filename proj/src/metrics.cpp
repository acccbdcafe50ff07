#include "cafeme/metrics.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace cafeme {

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::train: return "train";
        case Phase::eval: return "eval";
        case Phase::test: return "test";
    }
    return "train";
}

Phase parse_phase(std::string_view name) {
    if (name == "train") return Phase::train;
    if (name == "eval") return Phase::eval;
    if (name == "test") return Phase::test;
    throw SchemaError("unknown phase '" + std::string(name) + "'");
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("cannot format double");
    return std::string(buf, end);
}

void MetricsLog::add(const MetricRecord& r) {
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) {
        throw std::invalid_argument("accuracy " + format_double(r.accuracy) + " outside [0, 1]");
    }
    if (!(r.loss >= 0.0) || !std::isfinite(r.loss)) {
        throw std::invalid_argument("loss " + format_double(r.loss) + " is negative or not finite");
    }
    records_.push_back(r);
}

void MetricsLog::append(const MetricsLog& other) {
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::pair<double, double> MetricsLog::mean(Phase phase) const {
    double loss = 0.0, acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : records_) {
        if (r.phase != phase) continue;
        loss += r.loss;
        acc += r.accuracy;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("no " + std::string(to_string(phase)) + " records");
    return {loss / static_cast<double>(n), acc / static_cast<double>(n)};
}

void MetricsLog::write_csv(std::ostream& os) const {
    os << kHeader << '\n';
    for (const auto& r : records_) {
        os << r.round << ',' << r.client_id << ',' << to_string(r.phase) << ',' << format_double(r.loss) << ','
           << format_double(r.accuracy) << '\n';
    }
}

MetricsLog MetricsLog::read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw SchemaError("empty metrics CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) throw SchemaError("unexpected metrics header '" + line + "'");

    MetricsLog log;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 5) throw SchemaError("line " + std::to_string(line_no) + ": expected 5 fields");
        try {
            log.add(MetricRecord{std::stoul(fields[0]), std::stoi(fields[1]), parse_phase(fields[2]),
                                 std::stod(fields[3]), std::stod(fields[4])});
        } catch (const std::logic_error& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return log;
}

}  // namespace cafeme
