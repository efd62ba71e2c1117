#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scialloc/core_model.hpp"

namespace scialloc::cli {

/// Malformed input file: missing column, bad number, wrong row length.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// %.17g, or an empty string for NaN.
std::string format_number(double x);

/// One CSV row; cells with commas, quotes or newlines are quoted.
std::string csv_line(const std::vector<std::string>& cells);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(std::istream& in);

/// Canonical dataset: id, field, M, G, D, H, F, R, EG, M_tilde_1..4, feature_1..K.
void write_dataset(std::ostream& out, const std::vector<ResearcherRecord>& records);
std::vector<ResearcherRecord> read_dataset(std::istream& in);

/// JSON with every floating-point number printed at 17 significant digits;
/// NaN and infinities become null.
void write_json(std::ostream& out, const nlohmann::json& j);

}  // namespace scialloc::cli
