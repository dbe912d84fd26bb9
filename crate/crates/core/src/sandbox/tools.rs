//! The twelve sandbox tools: embedded constant tables plus pure arithmetic.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::registry::{ParamType, ToolParam, ToolSpec};
use crate::trajectory::Args;

type Transfer = fn(&Args) -> Result<Value, String>;

/// A tool spec bound to its deterministic implementation.
#[derive(Clone)]
pub struct SandboxTool {
    pub spec: ToolSpec,
    transfer: Transfer,
}

impl SandboxTool {
    pub fn run(&self, args: &Args) -> Result<Value, String> {
        (self.transfer)(args)
    }
}

impl std::fmt::Debug for SandboxTool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SandboxTool").field("spec", &self.spec.name).finish()
    }
}

pub struct Element {
    pub symbol: &'static str,
    pub number: u32,
    pub mass: f64,
    pub electronegativity: f64,
}

pub const ELEMENTS: &[Element] = &[
    Element { symbol: "H", number: 1, mass: 1.008, electronegativity: 2.20 },
    Element { symbol: "Li", number: 3, mass: 6.94, electronegativity: 0.98 },
    Element { symbol: "C", number: 6, mass: 12.011, electronegativity: 2.55 },
    Element { symbol: "N", number: 7, mass: 14.007, electronegativity: 3.04 },
    Element { symbol: "O", number: 8, mass: 15.999, electronegativity: 3.44 },
    Element { symbol: "F", number: 9, mass: 18.998, electronegativity: 3.98 },
    Element { symbol: "Na", number: 11, mass: 22.990, electronegativity: 0.93 },
    Element { symbol: "Mg", number: 12, mass: 24.305, electronegativity: 1.31 },
    Element { symbol: "Al", number: 13, mass: 26.982, electronegativity: 1.61 },
    Element { symbol: "Si", number: 14, mass: 28.085, electronegativity: 1.90 },
    Element { symbol: "P", number: 15, mass: 30.974, electronegativity: 2.19 },
    Element { symbol: "S", number: 16, mass: 32.06, electronegativity: 2.58 },
    Element { symbol: "Cl", number: 17, mass: 35.45, electronegativity: 3.16 },
    Element { symbol: "K", number: 19, mass: 39.098, electronegativity: 0.82 },
    Element { symbol: "Ca", number: 20, mass: 40.078, electronegativity: 1.00 },
    Element { symbol: "Fe", number: 26, mass: 55.845, electronegativity: 1.83 },
    Element { symbol: "Cu", number: 29, mass: 63.546, electronegativity: 1.90 },
    Element { symbol: "Zn", number: 30, mass: 65.38, electronegativity: 1.65 },
    Element { symbol: "Br", number: 35, mass: 79.904, electronegativity: 2.96 },
];

/// Densities in g/mL at room temperature.
pub const DENSITIES: &[(&str, f64)] = &[
    ("acetone", 0.784),
    ("benzene", 0.876),
    ("chloroform", 1.489),
    ("ethanol", 0.789),
    ("glycerol", 1.261),
    ("hexane", 0.655),
    ("mercury", 13.534),
    ("methanol", 0.792),
    ("water", 0.997),
];

pub const ELEMENT_PROPERTIES: &[&str] = &["atomic_mass", "atomic_number", "electronegativity"];

pub fn element(symbol: &str) -> Option<&'static Element> {
    ELEMENTS.iter().find(|e| e.symbol == symbol)
}

pub fn round_dp(x: f64, dp: i32) -> f64 {
    let f = 10f64.powi(dp);
    (x * f).round() / f
}

/// Rounds to `digits` significant figures through decimal formatting.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Parses `Ca(OH)2`-style formulas into element counts.
pub fn parse_formula(formula: &str) -> Result<BTreeMap<String, u32>, String> {
    let chars: Vec<char> = formula.trim().chars().collect();
    if chars.is_empty() {
        return Err("empty formula".into());
    }
    let mut stack: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new()];
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '(' {
            stack.push(BTreeMap::new());
            i += 1;
        } else if c == ')' {
            i += 1;
            let (mult, next) = read_count(&chars, i);
            i = next;
            let group = stack.pop().ok_or("unbalanced parentheses")?;
            let top = stack.last_mut().ok_or("unbalanced parentheses")?;
            for (el, n) in group {
                *top.entry(el).or_insert(0) += n * mult;
            }
        } else if c.is_ascii_uppercase() {
            let mut sym = c.to_string();
            i += 1;
            if i < chars.len() && chars[i].is_ascii_lowercase() {
                sym.push(chars[i]);
                i += 1;
            }
            if element(&sym).is_none() {
                return Err(format!("unknown element `{sym}`"));
            }
            let (n, next) = read_count(&chars, i);
            i = next;
            *stack.last_mut().expect("stack non-empty").entry(sym).or_insert(0) += n;
        } else {
            return Err(format!("unexpected character `{c}` in formula"));
        }
    }
    if stack.len() != 1 {
        return Err("unbalanced parentheses".into());
    }
    Ok(stack.pop().unwrap_or_default())
}

fn read_count(chars: &[char], mut i: usize) -> (u32, usize) {
    let start = i;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if i == start {
        return (1, i);
    }
    let n = chars[start..i].iter().collect::<String>().parse().unwrap_or(1);
    (n, i)
}

pub fn formula_mass(formula: &str) -> Result<f64, String> {
    let counts = parse_formula(formula)?;
    let total: f64 = counts
        .iter()
        .map(|(el, &n)| element(el).map_or(0.0, |e| e.mass) * f64::from(n))
        .sum();
    Ok(round_dp(total, 3))
}

fn arg<'a>(args: &'a Args, key: &str) -> Result<&'a Value, String> {
    args.get(key).ok_or_else(|| format!("missing parameter `{key}`"))
}

fn num(args: &Args, key: &str) -> Result<f64, String> {
    arg(args, key)?.as_f64().ok_or_else(|| format!("parameter `{key}` must be a number"))
}

fn text<'a>(args: &'a Args, key: &str) -> Result<&'a str, String> {
    arg(args, key)?.as_str().ok_or_else(|| format!("parameter `{key}` must be a string"))
}

fn number(x: f64) -> Result<Value, String> {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .ok_or_else(|| "result is not a finite number".to_owned())
}

fn molar_mass(args: &Args) -> Result<Value, String> {
    number(formula_mass(text(args, "formula")?)?)
}

fn element_property(args: &Args) -> Result<Value, String> {
    let symbol = text(args, "symbol")?;
    let el = element(symbol).ok_or_else(|| format!("unknown element `{symbol}`"))?;
    match text(args, "property")? {
        "atomic_mass" => number(el.mass),
        "atomic_number" => Ok(json!(el.number)),
        "electronegativity" => number(el.electronegativity),
        other => Err(format!("unknown property `{other}`")),
    }
}

enum Dimension {
    Temperature,
    Scaled(&'static str, f64),
}

fn unit(name: &str) -> Option<Dimension> {
    Some(match name {
        "C" | "K" | "F" => Dimension::Temperature,
        "mg" => Dimension::Scaled("mass", 1.0),
        "g" => Dimension::Scaled("mass", 1e3),
        "kg" => Dimension::Scaled("mass", 1e6),
        "mL" => Dimension::Scaled("volume", 1.0),
        "L" => Dimension::Scaled("volume", 1e3),
        _ => return None,
    })
}

fn unit_convert(args: &Args) -> Result<Value, String> {
    let value = num(args, "value")?;
    let (from, to) = (text(args, "from")?, text(args, "to")?);
    let du = unit(from).ok_or_else(|| format!("unknown unit `{from}`"))?;
    let dv = unit(to).ok_or_else(|| format!("unknown unit `{to}`"))?;
    let out = match (du, dv) {
        (Dimension::Temperature, Dimension::Temperature) => {
            let kelvin = match from {
                "C" => value + 273.15,
                "F" => (value - 32.0) * 5.0 / 9.0 + 273.15,
                _ => value,
            };
            match to {
                "C" => kelvin - 273.15,
                "F" => (kelvin - 273.15) * 9.0 / 5.0 + 32.0,
                _ => kelvin,
            }
        }
        (Dimension::Scaled(a, fa), Dimension::Scaled(b, fb)) if a == b => value * fa / fb,
        _ => return Err(format!("cannot convert {from} to {to}")),
    };
    number(round_dp(out, 6))
}

fn side_counts(side: &Value, key: &str) -> Result<BTreeMap<String, u32>, String> {
    let items = side.as_array().ok_or_else(|| format!("parameter `{key}` must be an array"))?;
    if items.is_empty() {
        return Err(format!("`{key}` is empty"));
    }
    let mut total = BTreeMap::new();
    for item in items {
        let s = item.as_str().ok_or_else(|| format!("`{key}` entries must be strings"))?.trim();
        let digits = s.chars().take_while(char::is_ascii_digit).count();
        let coeff: u32 = if digits == 0 { 1 } else { s[..digits].parse().map_err(|_| "bad coefficient")? };
        for (el, n) in parse_formula(&s[digits..])? {
            *total.entry(el).or_insert(0) += n * coeff;
        }
    }
    Ok(total)
}

fn balance_check(args: &Args) -> Result<Value, String> {
    let left = side_counts(arg(args, "reactants")?, "reactants")?;
    let right = side_counts(arg(args, "products")?, "products")?;
    Ok(Value::Bool(left == right))
}

fn dilution_calc(args: &Args) -> Result<Value, String> {
    let (c1, v1, v2) = (num(args, "c1")?, num(args, "v1")?, num(args, "v2")?);
    if v2 <= 0.0 {
        return Err("v2 must be positive".into());
    }
    number(round_dp(c1 * v1 / v2, 6))
}

fn ph_from_concentration(args: &Args) -> Result<Value, String> {
    let c = num(args, "concentration")?;
    if c <= 0.0 {
        return Err("concentration must be positive".into());
    }
    number(round_dp(-c.log10(), 3))
}

fn smiles_length(args: &Args) -> Result<Value, String> {
    let smiles = text(args, "smiles")?.trim();
    if smiles.is_empty() {
        return Err("empty smiles".into());
    }
    let chars: Vec<char> = smiles.chars().collect();
    let (mut atoms, mut i) = (0u32, 0);
    while i < chars.len() {
        match chars[i] {
            '[' => {
                atoms += 1;
                while i < chars.len() && chars[i] != ']' {
                    i += 1;
                }
            }
            'C' if chars.get(i + 1) == Some(&'l') => {
                atoms += 1;
                i += 1;
            }
            'B' if chars.get(i + 1) == Some(&'r') => {
                atoms += 1;
                i += 1;
            }
            c if c.is_ascii_uppercase() => atoms += 1,
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => atoms += 1,
            _ => {}
        }
        i += 1;
    }
    if atoms == 0 {
        return Err("no atoms in smiles".into());
    }
    Ok(json!(atoms))
}

fn formula_parse(args: &Args) -> Result<Value, String> {
    let counts = parse_formula(text(args, "formula")?)?;
    Ok(json!(counts))
}

fn mixture_mass(args: &Args) -> Result<Value, String> {
    let masses = arg(args, "masses")?.as_array().ok_or("parameter `masses` must be an array")?;
    if masses.is_empty() {
        return Err("no masses given".into());
    }
    let mut total = 0.0;
    for m in masses {
        total += m.as_f64().ok_or("masses must be numbers")?;
    }
    number(round_dp(total, 6))
}

fn reaction_yield(args: &Args) -> Result<Value, String> {
    let (actual, theoretical) = (num(args, "actual")?, num(args, "theoretical")?);
    if theoretical <= 0.0 {
        return Err("theoretical amount must be positive".into());
    }
    number(round_dp(actual / theoretical * 100.0, 3))
}

fn density_lookup(args: &Args) -> Result<Value, String> {
    let name = text(args, "substance")?;
    let key = name.trim().to_lowercase();
    DENSITIES
        .iter()
        .find(|(s, _)| *s == key)
        .map(|&(_, d)| json!(d))
        .ok_or_else(|| format!("unknown substance `{name}`"))
}

fn significant_round(args: &Args) -> Result<Value, String> {
    let value = num(args, "value")?;
    let digits = num(args, "digits")?;
    if !(1.0..=15.0).contains(&digits) || digits.fract() != 0.0 {
        return Err("digits must be an integer between 1 and 15".into());
    }
    number(round_sig(value, digits as usize))
}

fn tool(name: &str, description: &str, params: Vec<ToolParam>, returns: &str, transfer: Transfer) -> SandboxTool {
    SandboxTool {
        spec: ToolSpec {
            name: name.into(),
            description: description.into(),
            params,
            returns: returns.into(),
            code_path: format!("sandbox.{name}"),
        },
        transfer,
    }
}

fn p(name: &str, kind: ParamType, description: &str) -> ToolParam {
    ToolParam::new(name, kind, description, true)
}

pub fn catalog() -> Vec<SandboxTool> {
    use ParamType::*;
    vec![
        tool(
            "molar_mass",
            "Compute the molar mass in g/mol of a chemical formula such as H2O or Ca(OH)2.",
            vec![p("formula", String, "chemical formula")],
            "molar mass in g/mol",
            molar_mass,
        ),
        tool(
            "element_property",
            "Look up a property of a chemical element: atomic mass, atomic number or electronegativity.",
            vec![
                p("symbol", String, "element symbol, e.g. Na"),
                p("property", String, "one of atomic_mass, atomic_number, electronegativity"),
            ],
            "the requested property value",
            element_property,
        ),
        tool(
            "unit_convert",
            "Convert a value between units of temperature (C, K, F), mass (g, kg, mg) or volume (L, mL).",
            vec![
                p("value", Number, "quantity to convert"),
                p("from", String, "source unit"),
                p("to", String, "target unit"),
            ],
            "the converted value",
            unit_convert,
        ),
        tool(
            "balance_check",
            "Check whether a chemical reaction is balanced given reactant and product formulas with coefficients.",
            vec![
                p("reactants", Array, "reactant formulas, e.g. [\"2H2\", \"O2\"]"),
                p("products", Array, "product formulas"),
            ],
            "true when every element count matches on both sides",
            balance_check,
        ),
        tool(
            "dilution_calc",
            "Compute the final concentration after a dilution using c1 * v1 = c2 * v2.",
            vec![
                p("c1", Number, "initial concentration"),
                p("v1", Number, "initial volume"),
                p("v2", Number, "final volume"),
            ],
            "final concentration c2",
            dilution_calc,
        ),
        tool(
            "ph_from_concentration",
            "Compute the pH from a hydrogen ion concentration in mol/L.",
            vec![p("concentration", Number, "hydrogen ion concentration in mol/L")],
            "pH value",
            ph_from_concentration,
        ),
        tool(
            "smiles_length",
            "Count the atoms in a SMILES string.",
            vec![p("smiles", String, "SMILES representation of a molecule")],
            "number of atoms",
            smiles_length,
        ),
        tool(
            "formula_parse",
            "Parse a chemical formula into a map of element counts.",
            vec![
                p("formula", String, "chemical formula"),
                ToolParam::new("context", BlobRef, "optional handle to a cached structure", false),
            ],
            "map from element symbol to count",
            formula_parse,
        ),
        tool(
            "mixture_mass",
            "Compute the total mass of a mixture by adding the component masses.",
            vec![p("masses", Array, "component masses")],
            "total mass",
            mixture_mass,
        ),
        tool(
            "reaction_yield",
            "Compute the percent yield of a reaction from the actual and theoretical amounts.",
            vec![
                p("actual", Number, "amount actually obtained"),
                p("theoretical", Number, "theoretical amount"),
            ],
            "percent yield",
            reaction_yield,
        ),
        tool(
            "density_lookup",
            "Look up the density in g/mL of a common liquid substance.",
            vec![p("substance", String, "substance name, e.g. ethanol")],
            "density in g/mL",
            density_lookup,
        ),
        tool(
            "significant_round",
            "Round a number to a given count of significant figures.",
            vec![p("value", Number, "number to round"), p("digits", Integer, "significant figures, 1 to 15")],
            "the rounded number",
            significant_round,
        ),
    ]
}
