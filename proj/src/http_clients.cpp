// Clients for the model-adapter wire protocol (`/unmask`, `/translate`).
#include <limits>

#include "httplib.h"

#include "perturbqe/errors.hpp"
#include "perturbqe/mt_client.hpp"
#include "perturbqe/perturbation.hpp"

namespace pqe {

namespace {

struct Endpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // optional path prefix, no trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  Endpoint e;
  if (slash == std::string::npos) {
    e.base = url;
  } else {
    e.base = url.substr(0, slash);
    e.prefix = url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  }
  return e;
}

std::string post_json(const std::string& url, const std::string& path, const std::string& body,
                      std::chrono::seconds timeout, bool provider) {
  const Endpoint endpoint = split_endpoint(url);
  httplib::Client client(endpoint.base);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  auto fail = [&](const std::string& what, bool transient) -> std::string {
    if (provider) throw ProviderError(what, transient);
    throw BackendError(what, transient);
  };
  auto response = client.Post(endpoint.prefix + path, body, "application/json");
  if (!response) {
    return fail("POST " + url + path + " failed: " + httplib::to_string(response.error()), true);
  }
  if (response->status >= 500) {
    return fail("POST " + url + path + " returned HTTP " + std::to_string(response->status), true);
  }
  if (response->status != 200) {
    return fail("POST " + url + path + " returned HTTP " + std::to_string(response->status) + ": " +
                    response->body,
                false);
  }
  return response->body;
}

}  // namespace

RemoteMaskedLM::RemoteMaskedLM(std::string endpoint, std::chrono::seconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {}

std::string RemoteMaskedLM::encode_request(std::span<const std::string> tokens,
                                           std::size_t mask_index, std::size_t n) {
  nlohmann::json j;
  j["tokens"] = Tokens(tokens.begin(), tokens.end());
  j["mask_index"] = mask_index;
  j["n"] = n;
  return j.dump();
}

Tokens RemoteMaskedLM::decode_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("unmask response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("candidates") || !j.at("candidates").is_array()) {
    throw ProtocolError("unmask response lacks a candidates array");
  }
  Tokens out;
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& c : j.at("candidates")) {
    if (!c.is_object() || !c.contains("token") || !c.at("token").is_string() ||
        !c.contains("score") || !c.at("score").is_number()) {
      throw ProtocolError("unmask candidate must be {token: string, score: number}");
    }
    const double score = c.at("score").get<double>();
    if (score > previous) throw ProtocolError("unmask candidates are not ordered by score");
    previous = score;
    out.push_back(c.at("token").get<std::string>());
  }
  return out;
}

Tokens RemoteMaskedLM::candidates(std::span<const std::string> tokens, std::size_t mask_index,
                                  std::size_t n) const {
  if (mask_index >= tokens.size()) throw InvalidInput("mask index out of range");
  const std::string body =
      post_json(endpoint_, "/unmask", encode_request(tokens, mask_index, n), timeout_, true);
  Tokens out = decode_response(body);
  if (out.size() > n) out.resize(n);
  return out;
}

HttpBackend::HttpBackend(std::string endpoint, std::string prompt_template,
                         std::chrono::seconds timeout, std::string id)
    : endpoint_(std::move(endpoint)),
      prompt_template_(std::move(prompt_template)),
      timeout_(timeout),
      id_(std::move(id)) {
  if (id_.empty()) {
    id_ = "http:" + endpoint_;
    if (!prompt_template_.empty()) id_ += "|" + prompt_template_;
  }
}

std::string HttpBackend::encode_request(std::span<const std::string> texts) {
  nlohmann::json j;
  j["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  return j.dump();
}

std::vector<BackendResult> HttpBackend::decode_response(std::string_view body, std::size_t expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("translate response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("results") || !j.at("results").is_array()) {
    throw ProtocolError("translate response lacks a results array");
  }
  const auto& results = j.at("results");
  if (results.size() != expected) {
    throw ProtocolError("translate response has " + std::to_string(results.size()) +
                        " results for " + std::to_string(expected) + " texts");
  }
  std::vector<BackendResult> out;
  for (const auto& r : results) {
    if (!r.is_object() || !r.contains("translation") || !r.at("translation").is_string()) {
      throw ProtocolError("translate result lacks a translation string");
    }
    BackendResult result;
    result.translation = r.at("translation").get<std::string>();
    try {
      if (r.contains("tokens") && !r.at("tokens").is_null()) result.tokens = r.at("tokens").get<Tokens>();
      if (r.contains("logprobs") && !r.at("logprobs").is_null()) {
        result.logprobs = r.at("logprobs").get<std::vector<double>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("translate result has malformed fields: ") + e.what());
    }
    if (result.logprobs && (!result.tokens || result.tokens->size() != result.logprobs->size())) {
      throw ProtocolError("translate result logprobs must align with tokens");
    }
    out.push_back(std::move(result));
  }
  return out;
}

std::vector<BackendResult> HttpBackend::translate(std::span<const std::string> texts) {
  std::vector<std::string> prompted;
  prompted.reserve(texts.size());
  for (const auto& t : texts) prompted.push_back(apply_prompt(prompt_template_, t));
  const std::string body = post_json(endpoint_, "/translate", encode_request(prompted), timeout_, false);
  auto results = decode_response(body, texts.size());
  for (const auto& r : results) {
    if (r.logprobs) saw_logprobs_ = true;
  }
  return results;
}

}  // namespace pqe
