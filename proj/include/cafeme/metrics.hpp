#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cafeme {

enum class Phase { train, eval, test };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view name);

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricRecord {
    std::size_t round = 0;
    int client_id = 0;
    Phase phase = Phase::train;
    double loss = 0.0;
    double accuracy = 0.0;

    bool operator==(const MetricRecord&) const = default;
};

/// Per-round, per-client loss/accuracy records.
class MetricsLog {
public:
    static constexpr std::string_view kHeader = "round,client_id,phase,loss,accuracy";

    /// Rejects accuracy outside [0, 1] and negative or non-finite loss.
    void add(const MetricRecord& record);
    void add(std::size_t round, int client_id, Phase phase, double loss, double accuracy) {
        add(MetricRecord{round, client_id, phase, loss, accuracy});
    }
    void append(const MetricsLog& other);

    const std::vector<MetricRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    /// Mean loss and accuracy over records with this phase.
    std::pair<double, double> mean(Phase phase) const;

    void write_csv(std::ostream& os) const;
    static MetricsLog read_csv(std::istream& is);

    bool operator==(const MetricsLog&) const = default;

private:
    std::vector<MetricRecord> records_;
};

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace cafeme
