//! The analysis steps. Each takes parsed inputs and returns the new state
//! together with the reports to print; nothing here touches the file system.

use crate::config::{AdaptationConfig, DesignConfig, SimulationFile, TableKind, TrialMethod};
use crate::error::{CliError, Context, Result};
use crate::report::{closure_order, Cell, Report};
use crate::state::*;
use gmcp_core::adaptation::{Adaptation, JPlusClass};
use gmcp_core::cer::{adapted_cumulative_p, cer_adapt, cer_final, cer_interim, CerInterimState, ClosurePlan};
use gmcp_core::combo::{combo_final, combo_interim, ComboDesign, ComboInterimState};
use gmcp_core::stagewise::{StageLabel, StageMarginals};
use gmcp_core::IndexSet;
use gmcp_sim::{fwer_table, power_table, run_study_with, StudyDesign};

enum Engine {
    Cer(ClosurePlan),
    Combo(ComboDesign),
}

enum Interim {
    Cer(CerInterimState),
    Combo(ComboInterimState),
}

impl Interim {
    fn remaining(&self) -> IndexSet {
        match self {
            Interim::Cer(s) => s.remaining(),
            Interim::Combo(s) => s.remaining(),
        }
    }
}

fn engine(config: &DesignConfig) -> Result<Engine> {
    let design = config.build()?;
    Ok(match config.method {
        TrialMethod::Cer => Engine::Cer(ClosurePlan::new(design).context("planned boundaries")?),
        TrialMethod::Combo => Engine::Combo(config.combo(design)?),
    })
}

fn class_label(c: JPlusClass) -> String {
    format!("{c:?}")
}

fn names(config: &DesignConfig) -> Result<Vec<String>> {
    Ok(config.graph()?.names().to_vec())
}

/// Parses the graph, knowledge and levels without solving any boundary.
pub fn validate(config: &DesignConfig) -> Result<Report> {
    let warnings = config.graph()?.validate().warnings;
    let design = config.build()?;
    let mut r = Report::new("design is valid", &["item", "value"]);
    r.push(vec!["method".into(), config.method.label().into()]);
    r.push(vec!["hypotheses".into(), design.k().to_string().into()]);
    r.push(vec!["alpha".into(), design.alpha.into()]);
    r.push(vec!["information fraction".into(), design.t.into()]);
    r.push(vec!["stage-one level".into(), design.alpha1().context("spending")?.into()]);
    r.push(vec!["initial weight".into(), design.graph.weights().iter().sum::<f64>().into()]);
    for w in warnings {
        r.push(vec!["warning".into(), w.into()]);
    }
    Ok(r)
}

/// Closure weights `w_{j,J}` of every intersection set.
pub fn weights(config: &DesignConfig) -> Result<Report> {
    let g = config.graph()?;
    let closure = g.closure_weights().context("closure weights")?;
    let mut header = vec!["J".to_string()];
    header.extend(g.names().iter().cloned());
    let mut r = Report {
        title: "closure weights".into(),
        header,
        rows: Vec::new(),
    };
    for set in closure_order(g.k()) {
        let w = closure.get(set);
        let mut row: Vec<Cell> = vec![set.into()];
        row.extend((0..g.k()).map(|j| if set.contains(j) { Cell::Num(w[j]) } else { Cell::Empty }));
        r.push(row);
    }
    Ok(r)
}

fn plan_record(config: &DesignConfig, engine: &Engine) -> PlanRecord {
    let mut sets = Vec::new();
    let (design, alpha1, nu) = match engine {
        Engine::Cer(p) => (&p.design, p.alpha1, None),
        Engine::Combo(c) => (&c.design, c.alpha1(), Some([c.nu1, c.nu2])),
    };
    for set in closure_order(design.k()) {
        let weights = design.closure().get(set).to_vec();
        let row = match engine {
            Engine::Cer(p) => {
                let sp = p.get(set);
                PlanRow {
                    set,
                    kind: sp.kind,
                    weights,
                    level_one: sp.c1,
                    level_two: sp.c2,
                    thresholds: sp
                        .thresholds()
                        .into_iter()
                        .map(|(j, a, b)| Threshold {
                            hypothesis: j + 1,
                            stage_one: a,
                            stage_two: Some(b),
                        })
                        .collect(),
                }
            }
            Engine::Combo(c) => {
                let (a1, a2) = c.levels(set);
                PlanRow {
                    set,
                    kind: design.local_test(set).kind,
                    weights,
                    level_one: a1,
                    level_two: a2,
                    thresholds: Vec::new(),
                }
            }
        };
        sets.push(row);
    }
    PlanRecord {
        design_hash: digest(config),
        alpha1,
        combination_weights: nu,
        sets,
    }
}

pub fn plan_report(state: &TrialState) -> Result<Report> {
    let k = state.design.graph.weights.len();
    let names = names(&state.design)?;
    match state.design.method {
        TrialMethod::Cer => {
            let mut header = vec!["J".to_string(), "test".into(), "c1".into(), "c2".into()];
            header.extend(names.iter().map(|n| format!("{n} stage 1")));
            header.extend(names.iter().map(|n| format!("{n} stage 2")));
            let mut r = Report {
                title: format!("planned boundaries, stage-one level {:.6}", state.plan.alpha1),
                header,
                rows: Vec::new(),
            };
            for p in &state.plan.sets {
                let mut row: Vec<Cell> = vec![p.set.into(), p.kind.label().into(), p.level_one.into(), p.level_two.into()];
                let find = |j: usize| p.thresholds.iter().find(|t| t.hypothesis == j + 1);
                row.extend((0..k).map(|j| Cell::from(find(j).map(|t| t.stage_one))));
                row.extend((0..k).map(|j| Cell::from(find(j).and_then(|t| t.stage_two))));
                r.push(row);
            }
            Ok(r)
        }
        TrialMethod::Combo => {
            let mut header = vec!["J".to_string(), "test".into()];
            header.extend(names.iter().map(|n| format!("w {n}")));
            header.extend(["alpha1".to_string(), "alpha2".into()]);
            let mut r = Report {
                title: "planned levels".into(),
                header,
                rows: Vec::new(),
            };
            for p in &state.plan.sets {
                let mut row: Vec<Cell> = vec![p.set.into(), p.kind.label().into()];
                row.extend((0..k).map(|j| if p.set.contains(j) { Cell::Num(p.weights[j]) } else { Cell::Empty }));
                row.extend([p.level_one.into(), p.level_two.into()]);
                r.push(row);
            }
            Ok(r)
        }
    }
}

pub fn plan(config: &DesignConfig) -> Result<(TrialState, Report)> {
    let engine = engine(config)?;
    let state = TrialState::new(config.clone(), plan_record(config, &engine));
    let report = plan_report(&state)?;
    Ok((state, report))
}

fn stage_one(p1: &[f64], k: usize) -> Result<StageMarginals> {
    if p1.len() != k {
        return Err(CliError::Invalid(format!("expected {k} stage-one p-values, got {}", p1.len())));
    }
    StageMarginals::complete(StageLabel::First, p1).context("stage-one p-values")
}

fn run_interim(engine: &Engine, p1: &[f64]) -> Result<Interim> {
    Ok(match engine {
        Engine::Cer(plan) => Interim::Cer(cer_interim(plan, &stage_one(p1, plan.k())?).context("interim analysis")?),
        Engine::Combo(c) => {
            Interim::Combo(combo_interim(c, &stage_one(p1, c.design.k())?).context("interim analysis")?)
        }
    })
}

pub fn interim(state: &TrialState, p1: &[f64]) -> Result<(TrialState, Report)> {
    state.require("interim", &[Stage::Planned])?;
    let engine = engine(&state.design)?;
    let result = run_interim(&engine, p1)?;
    let k = p1.len();
    let sets: Vec<InterimRow> = closure_order(k)
        .into_iter()
        .map(|set| match &result {
            Interim::Cer(s) => {
                let r = s.record(set);
                InterimRow {
                    set,
                    adjusted_p: None,
                    conditional_error: r.b,
                    rejected: r.rejected,
                }
            }
            Interim::Combo(s) => {
                let r = s.record(set);
                InterimRow {
                    set,
                    adjusted_p: Some(r.p1),
                    conditional_error: None,
                    rejected: r.rejected,
                }
            }
        })
        .collect();
    let (early, remaining) = match &result {
        Interim::Cer(s) => (s.early_rejected, s.remaining()),
        Interim::Combo(s) => (s.early_rejected, s.remaining()),
    };
    let mut next = state.clone();
    next.interim = Some(InterimRecord {
        design_hash: state.design_hash.clone(),
        plan_hash: digest(&state.plan),
        p1: p1.to_vec(),
        early_rejected: early,
        remaining,
        sets,
    });
    next.stage = Stage::Interim;
    next.seal();
    let report = interim_report(&next)?;
    Ok((next, report))
}

pub fn interim_report(state: &TrialState) -> Result<Report> {
    let i = state.interim.as_ref().ok_or_else(|| CliError::Lifecycle("no interim record".into()))?;
    let title = format!("stage-one rejections {}, continuing {}", i.early_rejected, i.remaining);
    let kinds = |set: IndexSet| {
        state
            .plan
            .sets
            .iter()
            .find(|p| p.set == set)
            .map_or("", |p| p.kind.label())
    };
    let mut r = match state.design.method {
        TrialMethod::Cer => Report::new(title, &["J", "test", "B_J", "rejected at stage one"]),
        TrialMethod::Combo => Report::new(title, &["J", "test", "adjusted p", "rejected at stage one"]),
    };
    for row in &i.sets {
        let value = row.conditional_error.or(row.adjusted_p);
        r.push(vec![row.set.into(), kinds(row.set).into(), value.into(), row.rejected.into()]);
    }
    Ok(r)
}

/// Rebuilds the engine and the interim result from the stored inputs.
fn replay(state: &TrialState) -> Result<(Engine, Interim)> {
    let engine = engine(&state.design)?;
    let p1 = &state
        .interim
        .as_ref()
        .ok_or_else(|| CliError::Lifecycle("no interim record".into()))?
        .p1;
    let interim = run_interim(&engine, p1)?;
    Ok((engine, interim))
}

fn design_of(engine: &Engine) -> &gmcp_core::design::Design {
    match engine {
        Engine::Cer(p) => &p.design,
        Engine::Combo(c) => &c.design,
    }
}

pub fn adapt(state: &TrialState, config: &AdaptationConfig) -> Result<(TrialState, Report)> {
    state.require("adapt", &[Stage::Interim])?;
    let (engine, interim) = replay(state)?;
    let design = design_of(&engine);
    let adaptation = config.build(design)?;
    adaptation.check_against(interim.remaining()).context("selection")?;
    let k = design.k();
    let mut sets = Vec::new();
    match (&engine, &interim) {
        (Engine::Cer(plan), Interim::Cer(st)) => {
            let rows = cer_adapt(plan, st, &adaptation).context("adapted boundaries")?;
            for set in closure_order(k) {
                let row = &rows[set.bits() as usize - 1];
                if st.record(set).rejected {
                    continue;
                }
                sets.push(AdaptedRow {
                    set,
                    class: row.class.map(class_label).unwrap_or_default(),
                    part: row.part,
                    kind: None,
                    boundary: row.c_tilde,
                    thresholds: row
                        .thresholds
                        .iter()
                        .map(|&(j, th)| Threshold {
                            hypothesis: j + 1,
                            stage_one: th,
                            stage_two: None,
                        })
                        .collect(),
                    rejected: row.rejected,
                });
            }
        }
        (Engine::Combo(c), Interim::Combo(st)) => {
            let remaining = st.remaining();
            for set in closure_order(k) {
                if st.record(set).rejected {
                    continue;
                }
                let (class, test) = c.stage_two_test(set, remaining, &adaptation);
                sets.push(AdaptedRow {
                    set,
                    class: class_label(class),
                    part: test.as_ref().map(|t| t.set),
                    kind: test.as_ref().map(|t| t.kind),
                    boundary: None,
                    thresholds: Vec::new(),
                    rejected: false,
                });
            }
        }
        _ => unreachable!("engine and interim come from the same design"),
    }
    let interim_record = state.interim.as_ref().expect("checked by replay");
    let mut next = state.clone();
    next.adaptation = Some(AdaptationRecord {
        design_hash: state.design_hash.clone(),
        interim_hash: digest(interim_record),
        config: config.clone(),
        information_fractions: adaptation.info_fractions.clone(),
        sets,
    });
    next.stage = Stage::Adapted;
    next.seal();
    let report = adaptation_report(&next)?;
    Ok((next, report))
}

pub fn adaptation_report(state: &TrialState) -> Result<Report> {
    let a = state
        .adaptation
        .as_ref()
        .ok_or_else(|| CliError::Lifecycle("no adaptation record".into()))?;
    let k = state.design.graph.weights.len();
    let names = names(&state.design)?;
    let fractions: Vec<String> = a.config.selected.iter().map(|j| format!("{:.4}", a.information_fractions[j])).collect();
    let title = format!(
        "continuing {} at information fractions ({})",
        a.config.selected,
        fractions.join(", ")
    );
    let mut header = vec!["J".to_string(), "class".into(), "tested".into()];
    match state.design.method {
        TrialMethod::Cer => {
            header.push("adapted c2".into());
            header.extend(names.iter().map(|n| format!("{n} threshold")));
        }
        TrialMethod::Combo => header.push("test".into()),
    }
    let mut r = Report {
        title,
        header,
        rows: Vec::new(),
    };
    for row in &a.sets {
        let mut cells: Vec<Cell> = vec![
            row.set.into(),
            row.class.clone().into(),
            row.part.map_or(Cell::Empty, Cell::from),
        ];
        match state.design.method {
            TrialMethod::Cer => {
                cells.push(row.boundary.into());
                let find = |j: usize| row.thresholds.iter().find(|t| t.hypothesis == j + 1).map(|t| t.stage_one);
                cells.extend((0..k).map(|j| Cell::from(find(j))));
            }
            TrialMethod::Combo => cells.push(row.kind.map_or(Cell::Empty, |t| t.label().into())),
        }
        r.push(cells);
    }
    Ok(r)
}

fn stage_two_inputs(p2: &[Option<f64>], selected: IndexSet, k: usize) -> Result<Vec<Option<f64>>> {
    if p2.len() != k {
        return Err(CliError::Invalid(format!(
            "expected {k} stage-two entries (use na for hypotheses not continued), got {}",
            p2.len()
        )));
    }
    for j in 0..k {
        match (selected.contains(j), p2[j]) {
            (true, None) => {
                return Err(CliError::Invalid(format!("missing stage-two p-value for H{}", j + 1)));
            }
            (false, Some(_)) => {
                return Err(CliError::Invalid(format!("H{} was not continued to stage two", j + 1)));
            }
            _ => {}
        }
    }
    Ok(p2.to_vec())
}

pub fn finalize(state: &TrialState, p2: &[Option<f64>]) -> Result<(TrialState, Vec<Report>)> {
    state.require("final", &[Stage::Interim, Stage::Adapted])?;
    let (engine, interim) = replay(state)?;
    let design = design_of(&engine);
    let k = design.k();
    let adaptation = match &state.adaptation {
        Some(a) => a.config.build(design)?,
        None => Adaptation::identity(interim.remaining(), &design.graph, design.t, &design.knowledge)
            .context("unchanged continuation")?,
    };
    let p2 = stage_two_inputs(p2, adaptation.selected, k)?;
    let p1 = &state.interim.as_ref().expect("checked by replay").p1;
    let mut cumulative = None;
    let (rejected_stage_one, rejected, sets) = match (&engine, &interim) {
        (Engine::Cer(plan), Interim::Cer(st)) => {
            let cum: Vec<Option<f64>> = (0..k)
                .map(|j| p2[j].map(|q| adapted_cumulative_p(p1[j], q, adaptation.info_fractions[j])))
                .collect();
            let marg = StageMarginals::new(StageLabel::SecondCumulative, cum.clone()).context("stage-two p-values")?;
            cumulative = Some(cum);
            let fin = cer_final(plan, st, &adaptation, &marg).context("final analysis")?;
            let rows = closure_order(k)
                .into_iter()
                .map(|set| {
                    let a = &fin.audit[set.bits() as usize - 1];
                    FinalRow {
                        set,
                        class: a.class.map(class_label),
                        stage_one_p: None,
                        stage_two_p: None,
                        combined_p: None,
                        conditional_error: a.b,
                        boundary: a.c_tilde,
                        rejected: a.rejected,
                    }
                })
                .collect();
            (fin.rejected_stage1, fin.rejected, rows)
        }
        (Engine::Combo(c), Interim::Combo(st)) => {
            let marg = StageMarginals::new(StageLabel::SecondIncremental, p2.clone()).context("stage-two p-values")?;
            let fin = combo_final(c, st, &adaptation, &marg).context("final analysis")?;
            let rows = closure_order(k)
                .into_iter()
                .map(|set| {
                    let a = &fin.audit[set.bits() as usize - 1];
                    FinalRow {
                        set,
                        class: a.class.map(class_label),
                        stage_one_p: Some(a.p1),
                        stage_two_p: a.p2,
                        combined_p: a.combined,
                        conditional_error: None,
                        boundary: None,
                        rejected: a.rejected,
                    }
                })
                .collect();
            (fin.rejected_stage1, fin.rejected, rows)
        }
        _ => unreachable!("engine and interim come from the same design"),
    };
    let upstream = match (&state.adaptation, &state.interim) {
        (Some(a), _) => digest(a),
        (None, Some(i)) => digest(i),
        (None, None) => unreachable!("checked by replay"),
    };
    let mut next = state.clone();
    next.decisions = Some(FinalRecord {
        design_hash: state.design_hash.clone(),
        upstream_hash: upstream,
        p2,
        cumulative_p: cumulative,
        rejected_stage_one,
        rejected,
        sets,
    });
    next.stage = Stage::Final;
    next.seal();
    let reports = final_reports(&next)?;
    Ok((next, reports))
}

pub fn final_reports(state: &TrialState) -> Result<Vec<Report>> {
    let f = state
        .decisions
        .as_ref()
        .ok_or_else(|| CliError::Lifecycle("no final record".into()))?;
    let i = state.interim.as_ref().ok_or_else(|| CliError::Lifecycle("no interim record".into()))?;
    let names = names(&state.design)?;
    let cer = state.design.method == TrialMethod::Cer;
    let mut header = vec!["hypothesis", "stage-one p", "stage-two p"];
    if cer {
        header.push("cumulative p");
    }
    header.push("decision");
    let mut decisions = Report::new(format!("rejected {}", f.rejected), &header);
    for (j, name) in names.iter().enumerate() {
        let decision = if f.rejected_stage_one.contains(j) {
            "rejected at stage one"
        } else if f.rejected.contains(j) {
            "rejected at stage two"
        } else {
            "not rejected"
        };
        let mut row: Vec<Cell> = vec![name.clone().into(), i.p1[j].into(), f.p2[j].into()];
        if let Some(c) = &f.cumulative_p {
            row.push(c[j].into());
        }
        row.push(decision.into());
        decisions.push(row);
    }
    let audit_header: &[&str] = if cer {
        &["J", "class", "B_J", "adapted c2", "rejected"]
    } else {
        &["J", "class", "stage-one p", "stage-two p", "combined p", "rejected"]
    };
    let mut audit = Report::new("closed test", audit_header);
    for r in &f.sets {
        let class = r.class.clone().map_or(Cell::Empty, Cell::from);
        let row = if cer {
            vec![r.set.into(), class, r.conditional_error.into(), r.boundary.into(), r.rejected.into()]
        } else {
            vec![
                r.set.into(),
                class,
                r.stage_one_p.into(),
                r.stage_two_p.into(),
                r.combined_p.into(),
                r.rejected.into(),
            ]
        };
        audit.push(row);
    }
    Ok(vec![decisions, audit])
}

/// Runs every cell of a simulation file on one shared design.
pub fn simulate(file: &SimulationFile) -> Result<Report> {
    let runs = file.runs()?;
    let study = StudyDesign::for_config(&runs[0])?;
    let mut reports = Vec::new();
    for config in &runs {
        reports.extend(run_study_with(&study, config)?);
    }
    let csv = match file.table {
        TableKind::Fwer => fwer_table(&reports)?,
        TableKind::Power => power_table(&reports)?,
    };
    let title = match file.table {
        TableKind::Fwer => "familywise error rate (%)",
        TableKind::Power => "power (%)",
    };
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Invalid(format!("csv: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let mut r = Report {
        title: title.into(),
        header,
        rows: Vec::new(),
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Invalid(format!("csv: {e}")))?;
        r.push(rec.iter().map(|s| Cell::Text(s.into())).collect());
    }
    Ok(r)
}

/// Reports of the latest step recorded in a state file.
pub fn show(state: &TrialState) -> Result<Vec<Report>> {
    let mut out = vec![plan_report(state)?];
    if state.interim.is_some() {
        out.push(interim_report(state)?);
    }
    if state.adaptation.is_some() {
        out.push(adaptation_report(state)?);
    }
    if state.decisions.is_some() {
        out.extend(final_reports(state)?);
    }
    Ok(out)
}
