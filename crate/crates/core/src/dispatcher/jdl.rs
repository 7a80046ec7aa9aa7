//! Job description documents handed to broker-kind sites.
//!
//! One `Key = "value";` line per key, in the order of [`JDL_KEYS`], each
//! newline-terminated:
//!
//! ```text
//! Executable = "gridgate-wrapper";
//! Arguments = "<events> <model> <seed>";
//! InputSandbox = "<app bundle URI>[,<input URI>...]";
//! OutputSandbox = "<results directory URI>";
//! Requirements = "toolcache == <name>/<version>";
//! ```
//!
//! `Requirements` is `"true"` when no tool cache is needed.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::fabric::{ToolRequirement, WrapperRequest};
use crate::model::{parse_grid_uri, JobsetSpec};

pub const JDL_KEYS: [&str; 5] = [
    "Executable",
    "Arguments",
    "InputSandbox",
    "OutputSandbox",
    "Requirements",
];
pub const WRAPPER_EXECUTABLE: &str = "gridgate-wrapper";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed job description: {0}")]
pub struct MalformedDescription(pub String);

pub fn render_broker_description(
    spec: &JobsetSpec,
    job_index: u32,
    tool: Option<&ToolRequirement>,
) -> String {
    let inputs = std::iter::once(&spec.app_bundle)
        .chain(&spec.input_data)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let requirements = match tool {
        Some(t) => format!("toolcache == {}/{}", t.name, t.version),
        None => "true".to_string(),
    };
    let values = [
        WRAPPER_EXECUTABLE.to_string(),
        format!(
            "{} {} {}",
            spec.events_per_job,
            spec.physics_model,
            spec.seed_for(job_index)
        ),
        inputs,
        spec.results_uri(job_index).to_string(),
        requirements,
    ];
    let mut doc = String::new();
    for (key, value) in JDL_KEYS.iter().zip(values) {
        doc.push_str(&format!("{key} = \"{value}\";\n"));
    }
    doc
}

/// Parses a document into its key/value map. All five keys are required,
/// each exactly once.
pub fn parse_broker_description(
    doc: &str,
) -> Result<BTreeMap<String, String>, MalformedDescription> {
    let bad = |m: String| MalformedDescription(m);
    let mut fields = BTreeMap::new();
    for (n, line) in doc.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected Key = \"value\";", n + 1)))?;
        let key = key.trim();
        if !JDL_KEYS.contains(&key) {
            return Err(bad(format!("line {}: unknown key {key:?}", n + 1)));
        }
        let value = rest
            .trim()
            .strip_suffix(';')
            .and_then(|v| v.trim().strip_prefix('"'))
            .and_then(|v| v.strip_suffix('"'))
            .filter(|v| !v.contains('"'))
            .ok_or_else(|| {
                bad(format!(
                    "line {}: value must be a quoted string followed by ';'",
                    n + 1
                ))
            })?;
        if fields.insert(key.to_string(), value.to_string()).is_some() {
            return Err(bad(format!("duplicate key {key}")));
        }
    }
    if let Some(missing) = JDL_KEYS.iter().find(|k| !fields.contains_key(**k)) {
        return Err(bad(format!("missing {missing} line")));
    }
    Ok(fields)
}

/// Rebuilds the wrapper request a broker runs for a parsed description.
/// Jobset id and index are the last two segments of the output directory.
pub fn description_to_request(
    fields: &BTreeMap<String, String>,
) -> Result<WrapperRequest, MalformedDescription> {
    let bad = |m: &str| MalformedDescription(m.to_string());
    let get = |k: &str| fields.get(k).map(String::as_str).unwrap_or("");
    // Brokers only know how to run the wrapper.
    if get("Executable") != WRAPPER_EXECUTABLE {
        return Err(MalformedDescription(format!(
            "Executable must be {WRAPPER_EXECUTABLE:?}"
        )));
    }
    let mut args = get("Arguments").split_whitespace();
    let events: u64 = args
        .next()
        .and_then(|a| a.parse().ok())
        .filter(|e| *e >= 1)
        .ok_or_else(|| bad("Arguments must start with a positive event count"))?;
    let physics_model = args
        .next()
        .ok_or_else(|| bad("Arguments lacks a model"))?
        .to_string();
    let seed: u64 = args
        .next()
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| bad("Arguments lacks a seed"))?;
    if args.next().is_some() {
        return Err(bad("Arguments has trailing values"));
    }
    let mut sandbox = get("InputSandbox")
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_grid_uri(s.trim()).map_err(|e| MalformedDescription(e.to_string())));
    let app_bundle = sandbox
        .next()
        .ok_or_else(|| bad("InputSandbox is empty"))??;
    let input_data = sandbox.collect::<Result<Vec<_>, _>>()?;
    let results_uri = parse_grid_uri(get("OutputSandbox"))
        .map_err(|e| MalformedDescription(e.to_string()))?
        .as_dir();
    let mut segs = results_uri
        .path()
        .split('/')
        .filter(|s| !s.is_empty())
        .rev();
    let job_index: u32 = segs
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("OutputSandbox must end in <jobset>/<index>/"))?;
    let jobset_id = segs
        .next()
        .ok_or_else(|| bad("OutputSandbox must end in <jobset>/<index>/"))?
        .to_string();
    let toolcache = match get("Requirements").trim() {
        "true" => None,
        req => {
            let (name, version) = req
                .strip_prefix("toolcache == ")
                .and_then(|r| r.rsplit_once('/'))
                .ok_or_else(|| {
                    bad("Requirements must be \"true\" or \"toolcache == name/version\"")
                })?;
            Some(ToolRequirement {
                name: name.to_string(),
                version: version.to_string(),
            })
        }
    };
    Ok(WrapperRequest {
        jobset_id,
        job_index,
        app_bundle,
        app_install_path: None,
        input_data,
        results_uri,
        events,
        physics_model,
        seed,
        toolcache,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> JobsetSpec {
        JobsetSpec {
            jobset_id: "js-7".into(),
            app_bundle: parse_grid_uri("file:///apps/athena.tar").unwrap(),
            input_data: vec![parse_grid_uri("gsiftp://h:1/in/a.dat").unwrap()],
            results_base: parse_grid_uri("gsiftp://h:1/results").unwrap(),
            events_per_job: 50,
            physics_model: "atlfast".into(),
            job_count: 5,
            rng_seed_base: 7,
            active_set: "eu".into(),
        }
    }

    #[test]
    fn renders_exact_format() {
        let tool = ToolRequirement {
            name: "gridgate-tools".into(),
            version: "1.0.0".into(),
        };
        let doc = render_broker_description(&spec(), 0, Some(&tool));
        assert_eq!(
            doc,
            "Executable = \"gridgate-wrapper\";\n\
             Arguments = \"50 atlfast 7\";\n\
             InputSandbox = \"file:///apps/athena.tar,gsiftp://h:1/in/a.dat\";\n\
             OutputSandbox = \"gsiftp://h:1/results/js-7/0/\";\n\
             Requirements = \"toolcache == gridgate-tools/1.0.0\";\n"
        );
        assert_eq!(doc, render_broker_description(&spec(), 0, Some(&tool)));
        assert!(render_broker_description(&spec(), 3, None)
            .contains("Arguments = \"50 atlfast 10\";\n"));
    }

    #[test]
    fn parse_inverts_render() {
        let doc = render_broker_description(&spec(), 2, None);
        let fields = parse_broker_description(&doc).unwrap();
        let expected: BTreeMap<String, String> = [
            ("Executable", "gridgate-wrapper"),
            ("Arguments", "50 atlfast 9"),
            (
                "InputSandbox",
                "file:///apps/athena.tar,gsiftp://h:1/in/a.dat",
            ),
            ("OutputSandbox", "gsiftp://h:1/results/js-7/2/"),
            ("Requirements", "true"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        assert_eq!(fields, expected);
        let req = description_to_request(&fields).unwrap();
        assert_eq!(req.jobset_id, "js-7");
        assert_eq!(req.job_index, 2);
        assert_eq!(req.seed, 9);
        assert_eq!(req.events, 50);
        assert_eq!(req.input_data.len(), 1);
        assert_eq!(req.results_uri, spec().results_uri(2));
    }

    #[test]
    fn rejects_malformed_documents() {
        let doc = render_broker_description(&spec(), 0, None);
        let without_exe: String = doc.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(parse_broker_description(&without_exe)
            .unwrap_err()
            .0
            .contains("Executable"));
        assert!(parse_broker_description(&format!("{doc}Arguments = \"1 a 1\";\n")).is_err());
        assert!(parse_broker_description(&doc.replace("\";", "\"")).is_err());
        assert!(parse_broker_description(&format!("{doc}Bogus = \"x\";\n")).is_err());
        let bad_args =
            parse_broker_description(&doc.replace("50 atlfast 7", "0 atlfast 7")).unwrap();
        assert!(description_to_request(&bad_args).is_err());
    }
}
