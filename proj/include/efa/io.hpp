#pragma once

// Text checkpoints (hexfloat, lossless round trip) and the flat key=value
// config format used by the command-line tool.

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace efa {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Layout:
//   ckpt 1 <n_meta> <n_tensors>
//   <key> <value>          (n_meta lines; value runs to end of line)
//   tensor <rows> <cols>   (then one hexfloat line per row)

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<Tensor> tensors;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return &v;
        return nullptr;
    }
};

inline std::string checkpoint_to_string(const Checkpoint& ck) {
    std::ostringstream os;
    os << "ckpt 1 " << ck.meta.size() << " " << ck.tensors.size() << "\n";
    for (const auto& [k, v] : ck.meta) {
        if (k.find_first_of(" \n") != std::string::npos || k.empty()) throw IoError("checkpoint: bad meta key");
        if (v.find('\n') != std::string::npos) throw IoError("checkpoint: meta value contains newline");
        os << k << " " << v << "\n";
    }
    os << std::hexfloat;
    for (const auto& t : ck.tensors) {
        os << "tensor " << t.rows << " " << t.cols << "\n";
        for (int r = 0; r < t.rows; ++r) {
            for (int c = 0; c < t.cols; ++c) os << (c ? " " : "") << t(r, c);
            os << "\n";
        }
    }
    return os.str();
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    size_t n_meta = 0, n_tensors = 0;
    in >> magic >> version >> n_meta >> n_tensors;
    if (!in || magic != "ckpt" || version != 1) throw IoError("checkpoint: bad header");
    in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    Checkpoint ck;
    std::string line;
    for (size_t i = 0; i < n_meta; ++i) {
        if (!std::getline(in, line)) throw IoError("checkpoint: truncated meta");
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw IoError("checkpoint: bad meta line");
        ck.meta.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    for (size_t i = 0; i < n_tensors; ++i) {
        std::string tag;
        int rows = 0, cols = 0;
        in >> tag >> rows >> cols;
        if (!in || tag != "tensor" || rows < 0 || cols < 0) throw IoError("checkpoint: bad tensor header");
        Tensor t(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                std::string tok;
                if (!(in >> tok)) throw IoError("checkpoint: truncated tensor data");
                t(r, c) = std::strtod(tok.c_str(), nullptr);
            }
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);  // binary: no newline translation
    if (!out) throw IoError("cannot write " + path);
    out << checkpoint_to_string(ck);
    if (!out) throw IoError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_string(buf.str());
}

inline Checkpoint snapshot_parameters(const std::vector<Var>& params,
                                      std::vector<std::pair<std::string, std::string>> meta = {}) {
    Checkpoint ck;
    ck.meta = std::move(meta);
    for (const auto& p : params) ck.tensors.push_back(p.value());
    return ck;
}

inline void restore_parameters(const Checkpoint& ck, std::vector<Var>& params) {
    if (ck.tensors.size() != params.size()) throw IoError("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = ck.tensors[i];
        if (!t.same_shape(params[i].value()))
            throw IoError("checkpoint: shape mismatch at tensor " + std::to_string(i));
        params[i].node()->val = t;
    }
}

// ---------------------------------------------------------------------------
// Flat key=value config
// ---------------------------------------------------------------------------
// One `key = value` pair per line; '#' starts a comment; blank lines ignored.

class Config {
public:
    static Config parse_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw IoError("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(trimmed.substr(0, eq)), value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw IoError("config line " + std::to_string(lineno) + ": empty key");
            if (cfg.kv_.count(key)) throw IoError("config: duplicate key " + key);
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw IoError("config: missing key " + key);
        return it->second;
    }
    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    long get_int(const std::string& key) const { return to_int(key, get_str(key)); }
    long get_int(const std::string& key, long dflt) const {
        return has(key) ? to_int(key, get_str(key)) : dflt;
    }

    double get_double(const std::string& key) const { return to_double(key, get_str(key)); }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? to_double(key, get_str(key)) : dflt;
    }

    bool get_bool(const std::string& key) const { return to_bool(key, get_str(key)); }
    bool get_bool(const std::string& key, bool dflt) const {
        return has(key) ? to_bool(key, get_str(key)) : dflt;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    // Canonical form: sorted keys, one per line. Byte-stable for identical
    // configurations regardless of original formatting.
    std::string snapshot() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        return os.str();
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;

    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    static long to_int(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            long x = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw IoError("config: key " + key + " is not an integer: " + v);
        }
    }
    static double to_double(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw IoError("config: key " + key + " is not a number: " + v);
        }
    }
    static bool to_bool(const std::string& key, const std::string& v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw IoError("config: key " + key + " is not a boolean: " + v);
    }
};

}  // namespace efa
