use nvsim::config::ProtocolConfig;
use nvsim::dynamics::RateModel;
use nvsim::protocols::nuclear::{Herald, HeraldMode};
use nvsim::protocols::oracle::{herald_law, Oracle};
use nvsim::protocols::Setup;
use nvsim::register::{HyperfineModel, Ms, NuclearConfig};
use nvsim::sequencer::{
    parse_program, run_program, same_program, Duration, Located, Predicate, ProtocolProgram, PumpKind, RunOptions, Statement,
};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "herald", "r_2"]).prop_map(String::from)
}

fn positive() -> impl Strategy<Value = f64> {
    (1u32..100_000).prop_map(|k| k as f64 / 1000.0)
}

fn duration() -> impl Strategy<Value = Duration> {
    prop_oneof![positive().prop_map(Duration::Micros), Just(Duration::Pi)]
}

fn leaf() -> impl Strategy<Value = Statement> {
    prop_oneof![
        (any::<bool>(), positive(), prop::option::of(positive())).prop_map(|(ms0, duration, power)| Statement::Pump {
            target: if ms0 { PumpKind::Ms0 } else { PumpKind::Pm1 },
            duration,
            power
        }),
        (2800u32..2950, positive(), duration()).prop_map(|(c, rabi, duration)| Statement::Mw { carrier: c as f64 + 0.125, rabi, duration }),
        (positive(), positive(), duration(), 0usize..3).prop_map(|(carrier, rabi, duration, nucleus)| Statement::Rf {
            carrier,
            rabi,
            duration,
            nucleus
        }),
        (positive(), 0u32..5, label(), prop::option::of(positive())).prop_map(|(duration, threshold, label, power)| Statement::Read {
            duration,
            threshold,
            label,
            power
        }),
        (label(), any::<bool>(), 0u32..5).prop_map(|(label, at_least, k)| Statement::Condition {
            label,
            predicate: if at_least { Predicate::AtLeast(k) } else { Predicate::Below(k) }
        }),
        (0u32..=100).prop_map(|k| Statement::CheckCharge { p_reject: k as f64 / 100.0 }),
    ]
}

fn statement() -> impl Strategy<Value = Statement> {
    leaf().prop_recursive(3, 24, 4, |inner| {
        (0u32..4, prop::collection::vec(inner, 1..4)).prop_map(|(n, body)| Statement::Repeat {
            n,
            body: body.into_iter().map(|statement| Located { line: 0, statement }).collect(),
        })
    })
}

fn program() -> impl Strategy<Value = ProtocolProgram> {
    (
        prop::option::of("[a-z][a-z0-9_]{0,8}"),
        prop::option::of(any::<u64>()),
        prop::option::of(0usize..100_000),
        prop::collection::vec(statement(), 0..8),
    )
        .prop_map(|(name, seed, n_shots, body)| ProtocolProgram {
            name,
            seed,
            n_shots,
            statements: body.into_iter().map(|statement| Located { line: 0, statement }).collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_programs_parse_back(p in program()) {
        prop_assume!(p.validate().is_ok());
        let text = p.to_string();
        let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert!(same_program(&p, &back), "{}", text);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn parser_never_panics(text in "[A-Za-z0-9 .#<>=_\n-]{0,200}") {
        let _ = parse_program(&text);
    }
}

fn nv_b() -> (RateModel, HyperfineModel, ProtocolConfig) {
    (RateModel::default(), HyperfineModel::nv_b(), ProtocolConfig::default())
}

const HERALD_ESR: &str = "\
NAME herald_esr
# Ex pump to ms = ±1, selective pi on the mI = -1 line, herald window
PUMP pm1 40us
MW 2874.0MHz 0.2MHz pi
READ 400ns >=1 herald 4.8nW
CONDITION herald counts>=1
";

#[test]
fn herald_program_matches_the_exact_herald_law() {
    let (r, h, p) = nv_b();
    let setup = Setup::new(&r, &h, &p);
    let prog = parse_program(HERALD_ESR).unwrap();
    let n = 20_000;
    let table = run_program(&prog, &setup, n, 5, RunOptions::default()).unwrap();

    let oracle = Oracle::new(&r, &h);
    let target = NuclearConfig::n14(-1);
    let herald = Herald::new(&setup, target, 1, HeraldMode::Target).unwrap();
    let law = herald_law(&oracle, &setup, &herald, &oracle.unpolarized(Ms::Zero)).unwrap();
    let purity = oracle.config_mass(&law.state, target);

    let accepted: Vec<_> = table.records.iter().filter(|r| r.accepted).collect();
    let s = law.first_attempt_success;
    let got = accepted.len() as f64 / n as f64;
    let se = (s * (1.0 - s) / n as f64).sqrt();
    assert!((got - s).abs() < 3.0 * se, "acceptance {got} vs exact {s}");

    let in_target = accepted.iter().filter(|r| r.nuclei == target.to_string()).count() as f64 / accepted.len() as f64;
    let se = (purity * (1.0 - purity) / accepted.len() as f64).sqrt();
    assert!((in_target - purity).abs() < 3.0 * se, "purity {in_target} vs exact {purity}");
}

#[test]
fn zero_shots_keep_the_header() {
    let (r, h, p) = nv_b();
    let setup = Setup::new(&r, &h, &p);
    let t = run_program(&parse_program(HERALD_ESR).unwrap(), &setup, 0, 1, RunOptions::default()).unwrap();
    assert!(t.records.is_empty());
    assert_eq!(t.to_csv().unwrap().lines().count(), 1);
    assert_eq!(t.summary().n_shots, 0);
}

#[test]
fn shot_tables_are_identical_across_thread_counts() {
    let (r, h, p) = nv_b();
    let setup = Setup::new(&r, &h, &p);
    let prog = parse_program(
        "PUMP ms0 10us\nREPEAT 2\n  MW 2874.0MHz 0.2MHz pi\n  READ 10us >=1 r\nEND\nCONDITION r counts<1\nCHECK_CHARGE 0.1\n",
    )
    .unwrap();
    let csv = |threads| run_program(&prog, &setup, 500, 99, RunOptions { threads: Some(threads), strict: false }).unwrap().to_csv().unwrap();
    let one = csv(1);
    assert_eq!(one, csv(8));
    assert_eq!(one, csv(3));
}

#[test]
fn charge_check_rejects_at_the_configured_rate() {
    let (r, h, p) = nv_b();
    let setup = Setup::new(&r, &h, &p);
    let prog = parse_program("CHECK_CHARGE 0.2\n").unwrap();
    let n = 10_000;
    let t = run_program(&prog, &setup, n, 4, RunOptions::default()).unwrap();
    let acc = t.summary().accepted.value;
    let se = (0.8f64 * 0.2 / n as f64).sqrt();
    assert!((acc - 0.8).abs() < 2.0 * se, "{acc}");
}

#[test]
fn never_executed_reads_do_not_define_labels() {
    assert!(parse_program("REPEAT 0\n  READ 1us >=1 r\nEND\nCONDITION r counts>=1\n").is_err());
    assert!(parse_program("REPEAT 1\n  READ 1us >=1 r\nEND\nCONDITION r counts>=1\n").is_ok());
}
