//! Canonical scenarios shipped with the crate.

use thiserror::Error;

use super::{parse, Scenario};

const LOST_UPDATE: &str = include_str!("../../scenarios/lost-update.wv");
const SPINLOCK: &str = include_str!("../../scenarios/spinlock.wv");
const CALCULATE: &str = include_str!("../../scenarios/calculate.wv");
const DEVICE_CLOBBER: &str = include_str!("../../scenarios/device-clobber.wv");
const BENIGN_RELEASE: &str = include_str!("../../scenarios/benign-release.wv");
const ACS_RACE: &str = include_str!("../../scenarios/acs-race.wv");
const RECURSIVE_F: &str = include_str!("../../scenarios/recursive-f.wv");

const BUILTINS: &[(&str, &str)] = &[
    ("lost-update", LOST_UPDATE),
    ("spinlock-increment", SPINLOCK),
    ("calculate", CALCULATE),
    ("benign-release", BENIGN_RELEASE),
    ("recursive-f", RECURSIVE_F),
    ("device-clobber", DEVICE_CLOBBER),
    ("acs-race", ACS_RACE),
];

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BuiltinError {
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

pub fn builtin(name: &str) -> Result<Scenario, BuiltinError> {
    let src = builtin_source(name).ok_or_else(|| BuiltinError::UnknownBuiltin(name.to_string()))?;
    Ok(parse(src).expect("shipped scenarios parse"))
}

/// Source of the `calculate` scenario with argument `m` and initial `*ptr`.
pub fn calculate_source(m: u64, initial: u64) -> String {
    CALCULATE
        .replace("global value = 4 @100", &format!("global value = {initial} @100"))
        .replace("li r1, 3", &format!("li r1, {m}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{Address, ThreadId, Word};
    use crate::program::{AddrOperand, Op};

    #[test]
    fn all_builtins_parse_within_size() {
        for name in builtin_names() {
            let s = builtin(name).unwrap();
            assert_eq!(s.name, name);
            for t in &s.threads {
                assert!(t.program.instructions.len() <= 12, "{name}/{}", t.name);
            }
        }
        assert_eq!(builtin("nope"), Err(BuiltinError::UnknownBuiltin("nope".into())));
    }

    #[test]
    fn lost_update_shape() {
        let s = builtin("lost-update").unwrap();
        assert_eq!(s.threads.len(), 2);
        assert_eq!(s.global("x").unwrap().init, Word(0));
        let ops: Vec<_> = s.threads[0].program.instructions.iter().map(|i| i.op.opcode().name()).collect();
        assert_eq!(ops, ["load", "addi", "store", "halt"]);
    }

    #[test]
    fn spinlock_guards_body() {
        let s = builtin("spinlock-increment").unwrap();
        assert_eq!(s.gateways.len(), 1);
        let p = &s.threads[0].program;
        assert!(matches!(p.instructions[0].op, Op::Acs { .. }));
        assert_eq!(p.critical.len(), 3);
        assert!(matches!(
            &p.instructions[5].op,
            Op::Store { addr: AddrOperand::Global { name, .. }, .. } if name == "gate"
        ));
    }

    #[test]
    fn benign_release_shape() {
        let s = builtin("benign-release").unwrap();
        assert!(matches!(s.threads[0].program.instructions[0].op, Op::Acs { .. }));
        assert!(matches!(s.threads[1].program.instructions[0].op, Op::Store { .. }));
        assert_eq!(s.global("gate").unwrap().init, Word(0));
    }

    #[test]
    fn calculate_parameterized() {
        let s = parse(&calculate_source(255, 7)).unwrap();
        assert_eq!(s.global("value").unwrap().init, Word(7));
        assert_eq!(s.threads[0].program.instructions[0].op, Op::Li { rd: crate::program::Reg(1), imm: 255 });
        assert_eq!(s.stack_region(ThreadId(0)).0, Address(512));
    }
}
