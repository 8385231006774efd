#include "sag/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sag/errors.hpp"

namespace sag {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(const std::string& data, std::string name)
        : data_(data), name_(std::move(name)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
                    << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    std::string magic() {
        need(4);
        std::string m = data_.substr(pos_, 4);
        pos_ += 4;
        return m;
    }

    bool exhausted() const { return pos_ == data_.size(); }

private:
    void need(std::size_t count) {
        if (pos_ + count > data_.size())
            throw IoError(name_ + ": payload length mismatch");
    }

    const std::string& data_;
    std::string name_;
    std::size_t pos_ = 0;
};

std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("cannot read " + path);
    return std::move(buf).str();
}

void write_binary_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("cannot write " + path);
}

void put_mlp(std::string& out, const Mlp& net) {
    put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& layer : net.layers) {
        put_u32(out, static_cast<std::uint32_t>(layer.w.rows()));
        put_u32(out, static_cast<std::uint32_t>(layer.w.cols()));
        for (double v : layer.w.data()) put_f64(out, v);
        for (double v : layer.b) put_f64(out, v);
    }
}

Mlp get_mlp(ByteReader& reader, const std::string& path) {
    const std::uint32_t n_layers = reader.u32();
    if (n_layers == 0) throw IoError(path + ": encoder has no layers");
    Mlp net;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        if (rows == 0 || cols == 0) throw IoError(path + ": zero layer dimension");
        DenseLayer layer{Mat(rows, cols), std::vector<double>(rows)};
        for (double& v : layer.w.data()) v = reader.f64();
        for (double& v : layer.b) v = reader.f64();
        if (!net.layers.empty() && net.layers.back().w.rows() != cols)
            throw IoError(path + ": inconsistent layer shapes");
        net.layers.push_back(std::move(layer));
    }
    for (const auto& layer : net.layers) {
        if (!layer.w.all_finite()) throw IoError(path + ": non-finite parameter");
        for (double v : layer.b)
            if (!std::isfinite(v)) throw IoError(path + ": non-finite parameter");
    }
    return net;
}

} // namespace

void save_emb(const std::string& path, const Mat& x) {
    require_finite(x, "save_emb");
    std::string out = "EMB1";
    put_u32(out, static_cast<std::uint32_t>(x.rows()));
    put_u32(out, static_cast<std::uint32_t>(x.cols()));
    for (double v : x.data()) put_f64(out, v);
    write_binary_file(path, out);
}

Mat load_emb(const std::string& path) {
    const std::string data = read_binary_file(path);
    ByteReader reader(data, path);
    if (reader.magic() != "EMB1") throw IoError(path + ": bad magic, expected EMB1");
    const std::uint32_t n = reader.u32();
    const std::uint32_t d = reader.u32();
    if (n == 0 || d == 0) throw IoError(path + ": empty embedding");
    Mat x(n, d);
    for (double& v : x.data()) v = reader.f64();
    if (!reader.exhausted()) throw IoError(path + ": payload length mismatch");
    if (!x.all_finite()) throw IoError(path + ": non-finite value");
    return x;
}

Mat load_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) {
            std::size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(field, &pos);
            } catch (const std::exception&) {
                throw IoError(path + ":" + std::to_string(line_no) + ": bad number '" +
                              field + "'");
            }
            if (pos != field.size())
                throw IoError(path + ":" + std::to_string(line_no) + ": bad number '" +
                              field + "'");
            if (!std::isfinite(v))
                throw IoError(path + ":" + std::to_string(line_no) +
                              ": non-finite value rejected");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw IoError(path + ":" + std::to_string(line_no) + ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().empty()) throw IoError(path + ": empty matrix");
    Mat x(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) x(i, j) = rows[i][j];
    return x;
}

void save_csv_matrix(const std::string& path, const Mat& x) {
    require_finite(x, "save_csv_matrix");
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", x(i, j));
            if (j) out += ',';
            out += buf;
        }
        out += '\n';
    }
    write_binary_file(path, out);
}

Mat load_matrix_any(const std::string& path) {
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open " + path);
        char magic[4] = {};
        probe.read(magic, 4);
        if (probe.gcount() == 4 && std::string(magic, 4) == "EMB1")
            return load_emb(path);
    }
    return load_csv_matrix(path);
}

void save_encoder(const std::string& path, const ToyEncoder& enc) {
    std::string out = "ENC1";
    put_mlp(out, enc.encoder);
    put_mlp(out, enc.expander);
    write_binary_file(path, out);
}

ToyEncoder load_encoder(const std::string& path) {
    const std::string data = read_binary_file(path);
    ByteReader reader(data, path);
    if (reader.magic() != "ENC1") throw IoError(path + ": bad magic, expected ENC1");
    ToyEncoder enc;
    enc.encoder = get_mlp(reader, path);
    enc.expander = get_mlp(reader, path);
    if (!reader.exhausted()) throw IoError(path + ": payload length mismatch");
    if (enc.encoder.output_dim() != enc.expander.input_dim())
        throw IoError(path + ": encoder/expander shape mismatch");
    return enc;
}

std::string history_to_csv(std::span<const LossBreakdown> history) {
    std::string out = "epoch,invariance,variance,covariance,total\n";
    char buf[160];
    for (std::size_t e = 0; e < history.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", e,
                      history[e].invariance, history[e].variance,
                      history[e].covariance, history[e].total);
        out += buf;
    }
    return out;
}

std::string read_text_file(const std::string& path) { return read_binary_file(path); }

void write_text_file(const std::string& path, const std::string& content) {
    write_binary_file(path, content);
}

} // namespace sag
