use serde_json::Value;

fn agent() -> ureq::Agent {
    ureq::Agent::new_with_config(ureq::Agent::config_builder().http_status_as_error(false).build())
}

fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
    let mut resp = resp.expect("request failed");
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub fn get(url: &str) -> (u16, Value) {
    finish(agent().get(url).call())
}

pub fn post(url: &str, content_type: &str, body: &str) -> (u16, Value) {
    finish(agent().post(url).header("content-type", content_type).send(body))
}

pub fn post_json(url: &str, body: &Value) -> (u16, Value) {
    post(url, "application/json", &body.to_string())
}
