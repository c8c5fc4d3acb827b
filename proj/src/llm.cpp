#include "ltq/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace ltq {

using nlohmann::json;

std::optional<ChatConfig> ChatConfig::from_environment() {
    const char* base = std::getenv("LTQ_LLM_BASE_URL");
    if (base == nullptr || *base == '\0') return std::nullopt;
    ChatConfig config;
    config.base_url = base;
    if (const char* model = std::getenv("LTQ_LLM_MODEL")) config.model = model;
    if (const char* key = std::getenv("LTQ_LLM_API_KEY")) config.api_key = key;
    if (config.model.empty()) config.model = "gpt-3.5-turbo";
    return config;
}

std::string ChatClient::complete(const std::string& prompt) const {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);

    json body;
    body["model"] = config_.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});

    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
        throw ExecError("chat endpoint unreachable: " + config_.base_url);
    }
    if (res->status != 200) {
        throw ExecError("chat endpoint returned status " + std::to_string(res->status));
    }
    try {
        json j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ExecError(std::string("malformed chat response: ") + e.what());
    }
}

namespace {

std::string join_columns(const std::vector<std::string>& attr_names) {
    std::string out;
    for (std::size_t i = 0; i < attr_names.size(); ++i) {
        if (i > 0) out += ", ";
        out += attr_names[i];
    }
    return out;
}

std::string join_samples(const std::vector<std::string>& sample_texts) {
    std::string out;
    for (std::size_t i = 0; i < sample_texts.size(); ++i) {
        if (i > 0) out += "\n";
        out += sample_texts[i];
    }
    return out;
}

// strips whitespace, wrapping quotes and a trailing period from a model answer
std::string clean_answer(const std::string& raw) {
    std::string s = trim(raw);
    while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                             (s.front() == '\'' && s.back() == '\''))) {
        s = trim(s.substr(1, s.size() - 2));
    }
    if (!s.empty() && s.back() == '.') s = trim(s.substr(0, s.size() - 1));
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

std::string key_prompt(const std::vector<std::string>& attr_names,
                       const std::vector<std::string>& sample_texts) {
    std::ostringstream out;
    out << "I want to transform the information stored in texts into a table. "
        << "The table should have the following columns: " << join_columns(attr_names) << ".\n"
        << "In a first step, please specify one of the columns that act as a document-level key, "
        << "meaning that all extracted values should be unique per document. "
        << "Only output the name of that column without any explanations.\n\n"
        << "Sample of texts:\n"
        << join_samples(sample_texts);
    return out.str();
}

std::string kind_prompt(const std::vector<std::string>& attr_names,
                        const std::vector<std::string>& sample_texts) {
    std::ostringstream out;
    out << "I want to transform the information stored in texts into a table. "
        << "The table should have the following columns: " << join_columns(attr_names) << ".\n"
        << "In a first step, please determine if one or many rows are extracted per text "
        << "document. Please only output \"many\" or \"one\" without any explanations.\n\n"
        << "Sample of texts:\n"
        << join_samples(sample_texts);
    return out.str();
}

SchemaSuggestion suggest_registration(const std::vector<std::string>& sample_texts,
                                      const std::vector<std::string>& attr_names,
                                      const ChatClient& client) {
    if (attr_names.empty()) throw ValidationError("suggest_registration needs attribute names");
    if (sample_texts.empty()) throw ValidationError("suggest_registration needs sample texts");

    SchemaSuggestion suggestion;

    std::string kind_answer = clean_answer(client.complete(kind_prompt(attr_names, sample_texts)));
    std::string kind_lower = lower(kind_answer);
    if (kind_lower == "many") {
        suggestion.kind = TableKind::multi_row;
    } else if (kind_lower == "one") {
        suggestion.kind = TableKind::single_row;
    } else {
        throw ExecError("unparseable row-count answer: '" + kind_answer + "'");
    }

    std::string key_answer = clean_answer(client.complete(key_prompt(attr_names, sample_texts)));
    auto it = std::find_if(attr_names.begin(), attr_names.end(), [&](const std::string& a) {
        return lower(a) == lower(key_answer);
    });
    if (it == attr_names.end()) {
        throw ExecError("unparseable key answer: '" + key_answer + "' is not a column");
    }
    suggestion.document_level_key = *it;
    return suggestion;
}

}  // namespace ltq
