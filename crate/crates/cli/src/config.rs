//! Config files that pre-set command-line flags.
//!
//! ```text
//! # comment lines start with '#'
//! threads = 4            # (only full-line comments are recognised)
//! seed = 7
//!
//! [retrieve]
//! model = bm25
//! top-k = 100
//!
//! [index build]
//! stem = true
//! ```
//!
//! Keys are long flag names without the leading dashes. Keys before the first
//! section apply to every subcommand that has the flag; keys inside
//! `[subcommand]` apply to that subcommand only and must exist there. Values
//! run to the end of the line, with surrounding double quotes removed.
//! Switches take `true` or `false`; repeatable flags take a comma-separated
//! list. The settings are inserted right after the subcommand name, so flags
//! given on the command line win.

use std::collections::BTreeMap;

use clap::{ArgAction, Command};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub global: Vec<Entry>,
    pub sections: BTreeMap<String, Vec<Entry>>,
}

pub fn parse(text: &str) -> Result<ConfigFile, String> {
    let mut config = ConfigFile::default();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| format!("line {}: unterminated section header", i + 1))?;
            let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
            if name.is_empty() {
                return Err(format!("line {}: empty section name", i + 1));
            }
            config.sections.entry(name.clone()).or_default();
            section = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim().trim_start_matches("--").to_string();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("line {}: bad key {key:?}", i + 1));
        }
        if key == "config" {
            return Err(format!(
                "line {}: config files cannot include other config files",
                i + 1
            ));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value)
            .to_string();
        let entry = Entry {
            line: i + 1,
            key,
            value,
        };
        match &section {
            Some(name) => config.sections.get_mut(name).unwrap().push(entry),
            None => config.global.push(entry),
        }
    }
    Ok(config)
}

/// Global options that take a value, so the subcommand scan can skip them.
const VALUE_GLOBALS: [&str; 3] = ["--config", "--threads", "--seed"];

/// Path of `--config` on the command line, if any.
pub fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Subcommand names as given and the argv index right after the last one.
fn subcommand_path(argv: &[String], root: &Command) -> (Vec<String>, usize) {
    let mut path = Vec::new();
    let mut cmd = root;
    let mut i = 1;
    let mut end = 0;
    while i < argv.len() {
        let a = &argv[i];
        if VALUE_GLOBALS.contains(&a.as_str()) {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(a) {
            Some(sub) => {
                path.push(sub.get_name().to_string());
                cmd = sub;
                end = i + 1;
                if !cmd.has_subcommands() {
                    break;
                }
                i += 1;
            }
            None => break,
        }
    }
    (path, end)
}

fn leaf<'a>(root: &'a Command, path: &[String]) -> &'a Command {
    path.iter().fold(root, |cmd, name| {
        cmd.find_subcommand(name)
            .expect("path comes from the command tree")
    })
}

fn has_long(cmd: &Command, key: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(key))
        || cmd.get_subcommands().any(|s| has_long(s, key))
}

fn flag_args(cmd: &Command, entry: &Entry) -> Result<Vec<String>, String> {
    let arg = cmd
        .get_arguments()
        .find(|a| a.get_long() == Some(entry.key.as_str()))
        .expect("caller checked the key");
    let flag = format!("--{}", entry.key);
    match arg.get_action() {
        ArgAction::SetTrue => match entry.value.as_str() {
            "true" => Ok(vec![flag]),
            "false" => Ok(Vec::new()),
            other => Err(format!(
                "line {}: {} takes true or false, got {other:?}",
                entry.line, entry.key
            )),
        },
        ArgAction::Append => Ok(entry
            .value
            .split(',')
            .map(|v| format!("{flag}={}", v.trim()))
            .collect()),
        _ => Ok(vec![format!("{flag}={}", entry.value)]),
    }
}

/// Inserts config settings after the subcommand name. `root` must be built so
/// that global flags are visible on subcommands.
pub fn inject(argv: &[String], config: &ConfigFile, root: &Command) -> Result<Vec<String>, String> {
    let (path, at) = subcommand_path(argv, root);
    if path.is_empty() {
        return Ok(argv.to_vec());
    }
    let cmd = leaf(root, &path);
    let mut extra = Vec::new();
    for entry in &config.global {
        if cmd
            .get_arguments()
            .any(|a| a.get_long() == Some(entry.key.as_str()))
        {
            extra.extend(flag_args(cmd, entry)?);
        } else if !has_long(root, &entry.key) {
            return Err(format!(
                "line {}: no subcommand has a flag --{}",
                entry.line, entry.key
            ));
        }
    }
    if let Some(entries) = config.sections.get(&path.join(" ")) {
        for entry in entries {
            if !cmd
                .get_arguments()
                .any(|a| a.get_long() == Some(entry.key.as_str()))
            {
                return Err(format!(
                    "line {}: {} has no flag --{}",
                    entry.line,
                    path.join(" "),
                    entry.key
                ));
            }
            extra.extend(flag_args(cmd, entry)?);
        }
    }
    for name in config.sections.keys() {
        let mut cmd = root;
        for part in name.split(' ') {
            match cmd.find_subcommand(part) {
                Some(sub) => cmd = sub,
                None => return Err(format!("unknown section [{name}]")),
            }
        }
    }
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, ArgAction};

    fn root() -> Command {
        let mut cmd = Command::new("t")
            .arg(
                Arg::new("seed")
                    .long("seed")
                    .global(true)
                    .default_value("1"),
            )
            .subcommand(
                Command::new("retrieve")
                    .arg(Arg::new("top-k").long("top-k"))
                    .arg(Arg::new("stem").long("stem").action(ArgAction::SetTrue))
                    .arg(Arg::new("run").long("run").action(ArgAction::Append)),
            )
            .subcommand(
                Command::new("index")
                    .subcommand(Command::new("build").arg(Arg::new("out").long("out"))),
            );
        cmd.build();
        cmd
    }

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_sections_and_quotes() {
        let c = parse("# c\nseed = 3\n\n[index   build]\nout = \"a b\"\n").unwrap();
        assert_eq!(c.global[0].key, "seed");
        assert_eq!(c.sections["index build"][0].value, "a b");
        assert!(parse("nonsense\n").is_err());
        assert!(parse("[open\n").is_err());
        assert!(parse("config = x\n").is_err());
    }

    #[test]
    fn injects_after_subcommand() {
        let c =
            parse("seed = 9\nout = o\n[retrieve]\ntop-k = 5\nstem = true\nrun = a,b\n").unwrap();
        let out = inject(&args("t --seed 2 retrieve --top-k 7"), &c, &root()).unwrap();
        assert_eq!(
            out,
            args("t --seed 2 retrieve --seed=9 --top-k=5 --stem --run=a --run=b --top-k 7")
        );
        let out = inject(&args("t index build"), &c, &root()).unwrap();
        assert_eq!(out, args("t index build --seed=9 --out=o"));
    }

    #[test]
    fn rejects_unknown_keys() {
        let c = parse("[retrieve]\nout = x\n").unwrap();
        assert!(inject(&args("t retrieve"), &c, &root()).is_err());
        let c = parse("bogus = 1\n").unwrap();
        assert!(inject(&args("t retrieve"), &c, &root()).is_err());
        let c = parse("[nope]\n").unwrap();
        assert!(inject(&args("t retrieve"), &c, &root()).is_err());
        let c = parse("[retrieve]\nstem = maybe\n").unwrap();
        assert!(inject(&args("t retrieve"), &c, &root()).is_err());
    }

    #[test]
    fn finds_config_path() {
        assert_eq!(
            config_path(&args("t --config a retrieve")),
            Some("a".into())
        );
        assert_eq!(
            config_path(&args("t retrieve --config=b")),
            Some("b".into())
        );
        assert_eq!(config_path(&args("t retrieve")), None);
    }
}
