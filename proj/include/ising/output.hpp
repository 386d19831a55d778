#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace ising {

// Shortest round-trip decimal form; identical bytes for identical doubles.
std::string fmt_num(double x);
std::string csv_field(const std::string& s);

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
    CsvTable& row() {
        rows_.emplace_back();
        return *this;
    }
    CsvTable& operator<<(const std::string& s);
    CsvTable& operator<<(const char* s) { return *this << std::string(s); }
    CsvTable& operator<<(double x) { return *this << fmt_num(x); }
    CsvTable& operator<<(long long x) { return *this << std::to_string(x); }
    CsvTable& operator<<(int x) { return *this << std::to_string(x); }
    CsvTable& operator<<(long x) { return *this << std::to_string(x); }
    CsvTable& operator<<(unsigned long x) { return *this << std::to_string(x); }
    CsvTable& operator<<(unsigned long long x) { return *this << std::to_string(x); }
    CsvTable& operator<<(bool b) { return *this << std::string(b ? "1" : "0"); }

    std::size_t size() const { return rows_.size(); }
    void write(std::ostream& os) const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct SvgSeries {
    std::string label;
    std::vector<double> x, y, err;  // err may be empty
};

// Line plot with optional error bars; log_y plots log10 of positive values.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<SvgSeries>& series, bool log_y = false);

// Output root: the explicit path if given, else $ISING_OUT_DIR, else ./out.
std::filesystem::path output_root(const std::string& explicit_dir = {});

}  // namespace ising
