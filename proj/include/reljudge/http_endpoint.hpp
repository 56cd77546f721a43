#pragma once

#include <memory>
#include <string>

#include <httplib.h>

#include "reljudge/judge.hpp"

namespace reljudge {

/// POSTs chat-completion requests to `url` (scheme://host[:port]/path),
/// with an optional bearer token.
class HttpEndpoint : public Endpoint {
public:
  HttpEndpoint(const std::string& url, std::string token,
               std::chrono::seconds timeout = std::chrono::seconds(120))
      : token_(std::move(token)), timeout_(timeout) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("endpoint url '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    base_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url.starts_with("https://"))
      throw ValidationError("https endpoints need a build with CPPHTTPLIB_OPENSSL_SUPPORT");
#endif
  }

  HttpResponse post(const JudgeRequest& request) override {
    // httplib clients are not thread-safe; one per call keeps this reentrant.
    httplib::Client client(base_);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(path_, headers, request.body().dump(), "application/json");
    if (!res) throw Error("transport_error", "POST " + base_ + path_ + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

private:
  std::string base_;
  std::string path_;
  std::string token_;
  std::chrono::seconds timeout_;
};

}  // namespace reljudge
