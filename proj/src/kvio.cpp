#include "csifp/kvio.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csifp {

std::string format_double(double value) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

void KvBlock::set(const std::string& key, const std::string& value) {
    const auto it = index_.find(key);
    if (it != index_.end()) {
        entries_[it->second].second = value;
        return;
    }
    index_[key] = entries_.size();
    entries_.emplace_back(key, value);
}

void KvBlock::set(const std::string& key, double value) { set(key, format_double(value)); }

void KvBlock::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

void KvBlock::set(const std::string& key, unsigned long long value) { set(key, std::to_string(value)); }

bool KvBlock::has(const std::string& key) const { return index_.contains(key); }

const std::string& KvBlock::get(const std::string& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) throw std::out_of_range("missing key: " + key);
    return entries_[it->second].second;
}

std::string KvBlock::get_or(const std::string& key, const std::string& fallback) const {
    const auto it = index_.find(key);
    return it == index_.end() ? fallback : entries_[it->second].second;
}

double KvBlock::get_double(const std::string& key) const {
    const std::string& s = get(key);
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::invalid_argument("key " + key + " is not numeric: \"" + s + "\"");
    }
    return v;
}

long long KvBlock::get_int(const std::string& key) const {
    const std::string& s = get(key);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::invalid_argument("key " + key + " is not an integer: \"" + s + "\"");
    }
    return v;
}

std::string KvBlock::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

void KvBlock::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << to_string();
    if (!out) throw std::runtime_error("write failed: " + path);
}

KvBlock KvBlock::parse(const std::string& text) {
    KvBlock block;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("bad key=value line: " + line);
        block.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return block;
}

KvBlock KvBlock::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

}  // namespace csifp
