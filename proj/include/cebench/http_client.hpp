#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cebench {

// scheme://host[:port] origin plus any path prefix baked into the base url.
struct HttpTarget {
  std::string origin;
  std::string prefix;
};

inline HttpTarget split_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::runtime_error("base url missing scheme: " + base_url);
  }
  auto path_start = base_url.find('/', scheme_end + 3);
  HttpTarget t;
  if (path_start == std::string::npos) {
    t.origin = base_url;
  } else {
    t.origin = base_url.substr(0, path_start);
    t.prefix = base_url.substr(path_start);
    while (!t.prefix.empty() && t.prefix.back() == '/') t.prefix.pop_back();
  }
  return t;
}

struct HttpResponse {
  int status = 0;
  std::string body;
  // Transport-level failure description; status stays 0 in that case.
  std::string transport_error;
};

inline HttpResponse http_post_json(
    const std::string& base_url, const std::string& path,
    const nlohmann::json& body,
    const std::map<std::string, std::string>& headers = {},
    double timeout_s = 120.0) {
  HttpTarget target = split_url(base_url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(std::chrono::duration<double>(timeout_s));
  client.set_read_timeout(std::chrono::duration<double>(timeout_s));
  client.set_write_timeout(std::chrono::duration<double>(timeout_s));
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);
  auto res = client.Post(target.prefix + path, hdrs, body.dump(),
                         "application/json");
  HttpResponse out;
  if (!res) {
    out.transport_error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

}  // namespace cebench
