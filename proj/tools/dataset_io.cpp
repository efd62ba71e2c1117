#include "dataset_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace scialloc::cli {

namespace {

constexpr const char* kFixedColumns[] = {"id", "field", "M", "G", "D", "H", "F", "R", "EG"};

std::string tilde_column(int k) { return "M_tilde_" + std::to_string(k + 1); }

double parse_number(const std::string& cell, const std::string& column, std::size_t row) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first < last && *first == ' ') ++first;
    while (last > first && last[-1] == ' ') --last;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || first == last) {
        std::ostringstream os;
        os << "row " << row << ", column " << column << ": '" << cell << "' is not a number";
        throw SchemaError(os.str());
    }
    return v;
}

void write_indent(std::ostream& out, int depth) {
    out << '\n';
    for (int i = 0; i < depth; ++i) out << "  ";
}

void write_value(std::ostream& out, const nlohmann::json& j, int depth) {
    using V = nlohmann::json::value_t;
    switch (j.type()) {
        case V::object: {
            if (j.empty()) {
                out << "{}";
                return;
            }
            out << '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out << ',';
                first = false;
                write_indent(out, depth + 1);
                out << nlohmann::json(it.key()).dump() << ": ";
                write_value(out, it.value(), depth + 1);
            }
            write_indent(out, depth);
            out << '}';
            return;
        }
        case V::array: {
            if (j.empty()) {
                out << "[]";
                return;
            }
            // Arrays of scalars stay on one line.
            const bool flat = std::none_of(j.begin(), j.end(), [](const auto& e) {
                return e.is_object() || e.is_array();
            });
            out << '[';
            bool first = true;
            for (const auto& e : j) {
                if (!first) out << (flat ? ", " : ",");
                first = false;
                if (!flat) write_indent(out, depth + 1);
                write_value(out, e, depth + 1);
            }
            if (!flat) write_indent(out, depth);
            out << ']';
            return;
        }
        case V::number_float: {
            const double x = j.get<double>();
            if (!std::isfinite(x)) {
                out << "null";
            } else {
                out << format_number(x);
            }
            return;
        }
        default:
            out << j.dump();
    }
}

}  // namespace

std::string format_number(double x) {
    if (std::isnan(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_line(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0) line += ',';
        const auto& c = cells[i];
        if (c.find_first_of(",\"\n") == std::string::npos) {
            line += c;
        } else {
            line += '"';
            for (char ch : c) {
                if (ch == '"') line += '"';
                line += ch;
            }
            line += '"';
        }
    }
    return line;
}

CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false, any = false;
    auto end_cell = [&] {
        row.push_back(std::move(cell));
        cell.clear();
    };
    auto end_row = [&] {
        end_cell();
        if (!(row.size() == 1 && row[0].empty())) {
            if (t.header.empty()) {
                t.header = std::move(row);
            } else {
                t.rows.push_back(std::move(row));
            }
        }
        row.clear();
        any = false;
    };
    char ch;
    while (in.get(ch)) {
        any = true;
        if (quoted) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    cell += '"';
                } else {
                    quoted = false;
                }
            } else {
                cell += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            end_cell();
        } else if (ch == '\n') {
            end_row();
        } else if (ch != '\r') {
            cell += ch;
        }
    }
    if (quoted) throw SchemaError("unterminated quoted cell");
    if (any || !cell.empty() || !row.empty()) end_row();
    if (t.header.empty()) throw SchemaError("empty CSV: no header");
    return t;
}

void write_dataset(std::ostream& out, const std::vector<ResearcherRecord>& records) {
    std::size_t k = 0;
    for (const auto& r : records) k = std::max(k, r.features.size());
    std::vector<std::string> header(std::begin(kFixedColumns), std::end(kFixedColumns));
    for (int e = 0; e < kNumExperiments; ++e) header.push_back(tilde_column(e));
    for (std::size_t j = 0; j < k; ++j) header.push_back("feature_" + std::to_string(j + 1));
    out << csv_line(header) << '\n';
    for (const auto& r : records) {
        std::vector<std::string> cells{r.id,
                                       r.field,
                                       format_number(r.contract.salary),
                                       format_number(r.contract.guaranteed_funding),
                                       format_number(r.contract.duties),
                                       format_number(r.allocation.total_hours),
                                       format_number(r.allocation.fundraising),
                                       format_number(r.allocation.research),
                                       format_number(r.expected_extra_funding)};
        for (const auto& a : r.wtp_answers) cells.push_back(a ? format_number(*a) : "");
        for (std::size_t j = 0; j < k; ++j) {
            cells.push_back(j < r.features.size() ? format_number(r.features[j]) : "");
        }
        out << csv_line(cells) << '\n';
    }
}

std::vector<ResearcherRecord> read_dataset(std::istream& in) {
    const auto t = read_csv(in);
    auto index_of = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end()) throw SchemaError("missing column '" + name + "'");
        return static_cast<std::size_t>(it - t.header.begin());
    };
    std::vector<std::size_t> fixed;
    for (const char* c : kFixedColumns) fixed.push_back(index_of(c));
    std::array<std::size_t, kNumExperiments> tilde{};
    for (int e = 0; e < kNumExperiments; ++e) tilde[e] = index_of(tilde_column(e));
    std::vector<std::size_t> features;
    for (std::size_t j = 1;; ++j) {
        const auto name = "feature_" + std::to_string(j);
        if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
        features.push_back(index_of(name));
    }

    std::vector<ResearcherRecord> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        const std::size_t line = i + 2;
        if (row.size() != t.header.size()) {
            std::ostringstream os;
            os << "row " << line << " has " << row.size() << " cells, header has " << t.header.size();
            throw SchemaError(os.str());
        }
        auto num = [&](std::size_t col) { return parse_number(row[col], t.header[col], line); };
        ResearcherRecord r;
        r.id = row[fixed[0]];
        if (r.id.empty()) throw SchemaError("row " + std::to_string(line) + ": empty id");
        r.field = row[fixed[1]];
        r.contract = {num(fixed[2]), num(fixed[3]), num(fixed[4])};
        r.allocation.total_hours = num(fixed[5]);
        r.allocation.fundraising = num(fixed[6]);
        r.allocation.research = num(fixed[7]);
        r.expected_extra_funding = num(fixed[8]);
        for (int e = 0; e < kNumExperiments; ++e) {
            if (!row[tilde[e]].empty()) r.wtp_answers[e] = num(tilde[e]);
        }
        for (auto c : features) {
            if (row[c].empty()) {
                throw SchemaError("row " + std::to_string(line) + ": missing " + t.header[c]);
            }
            r.features.push_back(num(c));
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_json(std::ostream& out, const nlohmann::json& j) {
    write_value(out, j, 0);
    out << '\n';
}

}  // namespace scialloc::cli
