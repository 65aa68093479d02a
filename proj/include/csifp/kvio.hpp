#pragma once

#include <map>
#include <string>
#include <vector>

namespace csifp {

// Ordered key=value text block: one `key=value` per line, '#' comments.
// Used for manifests, resolved-config snapshots, and metric blocks.
class KvBlock {
public:
    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, long long value);
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, unsigned long long value);
    void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;  // throws if missing
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string to_string() const;
    void save(const std::string& path) const;
    static KvBlock parse(const std::string& text);
    static KvBlock load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;  // insertion order
    std::map<std::string, std::size_t> index_;
};

std::string format_double(double value);

}  // namespace csifp
