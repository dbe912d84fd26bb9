//! Loads a tool package from disk, retrieves tools for a query and validates calls.

use hemcts::registry::load_pool;
use hemcts::trajectory::ToolInvocation;
use serde_json::json;

const TOOLS: &str = r#"[
  {"name": "boiling_point", "description": "boiling point of a named solvent in kelvin",
   "params": [{"name": "solvent", "type": "string"}]},
  {"name": "ideal_gas_volume", "description": "volume of an ideal gas from moles, temperature and pressure",
   "params": [{"name": "moles", "type": "number"}, {"name": "temperature", "type": "number"},
              {"name": "pressure", "type": "number", "required": false}]},
  {"name": "load_spectrum", "description": "load a stored spectrum",
   "params": [{"name": "handle", "type": "blob_ref"}]}
]"#;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    std::fs::write(dir.path().join("tools.json"), TOOLS)?;
    let pool = load_pool(dir.path())?;

    for query in ["what volume does 2 moles of gas take", "solvent boiling point", "spectrum"] {
        let names: Vec<&str> = pool.retrieve(query, 2).iter().map(|t| t.name.as_str()).collect();
        println!("{query:?} -> {names:?}");
    }

    let calls = [
        ("ideal_gas_volume", json!({"moles": 2, "temperature": 300})),
        ("ideal_gas_volume", json!({"moles": "two", "temperature": 300})),
        ("ideal_gas_volume", json!({"temperature": 300, "volume": 1})),
        ("load_spectrum", json!({"handle": "s3://spectra/7"})),
        ("melting_point", json!({})),
    ];
    for (tool, args) in calls {
        let call = ToolInvocation::new(tool, serde_json::from_value(args)?);
        let report = pool.validate_invocation(&call);
        println!("{}: {}", call.summary(), if report.is_empty() { "ok".to_owned() } else { report.to_string() });
    }
    Ok(())
}
