use std::error::Error as StdError;
use std::fs;
use std::path::Path;

use desmooth::analysis::{
    builtin_cases, default_bucket_edges, entropy_profile_par, load_cases, repetition_experiment, run_checklist,
    RepetitionConfig,
};
use desmooth::io::{load_dump, load_model, open_dump, preset, save_model, ModelSize};
use desmooth::smoothing::verify_batch;
use desmooth::{generate, tokenize, Dist, Error, GenerationStatus, NGramModel, Rng, RuleKind, TruncationRule};

use crate::output::{opt, Report};
use crate::{Command, RuleArgs};

type CliResult<T = ()> = Result<T, Box<dyn StdError>>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Truncate { rule, dump, out } => truncate_cmd(&rule, &dump, out.as_deref()),
        Command::NgramTrain {
            corpus,
            order,
            smooth,
            model_out,
            out,
        } => train_cmd(&corpus, order, smooth, &model_out, out.as_deref()),
        Command::NgramGen {
            model,
            prompt,
            steps,
            rule,
            seed,
            out,
        } => gen_cmd(&model, &prompt, steps, &rule, seed, out.as_deref()),
        Command::EntropyProfile {
            dump,
            model,
            rule,
            buckets,
            out,
        } => profile_cmd(dump.as_deref(), model.as_deref(), &rule, &buckets, out.as_deref()),
        Command::Repetition {
            model,
            prompts,
            rule,
            seed,
            completions,
            max_steps,
            tail,
            reps,
            threshold,
            out,
        } => {
            let config = RepetitionConfig {
                tail_len: tail,
                extra_reps: reps,
                completions_per_prompt: completions,
                max_steps,
                threshold,
            };
            repetition_cmd(&model, &prompts, &rule, &config, seed, out.as_deref())
        }
        Command::Checklist {
            cases,
            rules,
            print_threshold,
            strict,
            out,
        } => checklist_cmd(&cases, &rules, print_threshold, strict, out.as_deref()),
        Command::SmoothingVerify {
            scenarios,
            vocab,
            seed,
            out,
        } => verify_cmd(scenarios, vocab, seed, out.as_deref()),
    }
}

/// `None` means sample from the model unchanged.
fn resolve_rule(args: &RuleArgs) -> CliResult<Option<TruncationRule>> {
    let spec = args.rule.trim();
    if spec.eq_ignore_ascii_case("none") {
        if args.param.is_some() || args.preset.is_some() {
            return Err("--rule none takes no --param or --preset".into());
        }
        return Ok(None);
    }
    if spec.contains(':') {
        if args.param.is_some() || args.preset.is_some() {
            return Err(format!("rule {spec:?} already carries its parameter").into());
        }
        return Ok(Some(spec.parse()?));
    }
    let kind: RuleKind = spec.parse()?;
    let rule = match (args.param, args.preset.as_deref()) {
        (Some(v), _) => kind.with_param(v)?,
        (None, Some(size)) => preset(size.parse::<ModelSize>()?, kind)?,
        (None, None) => return Err(format!("rule {kind} needs --param or --preset").into()),
    };
    Ok(Some(rule))
}

fn require_rule(args: &RuleArgs) -> CliResult<TruncationRule> {
    resolve_rule(args)?.ok_or_else(|| "this subcommand needs a truncation rule, not `none`".into())
}

fn rule_label(rule: Option<&TruncationRule>) -> String {
    rule.map_or_else(|| "none".to_string(), ToString::to_string)
}

fn truncate_cmd(args: &RuleArgs, dump: &Path, out: Option<&Path>) -> CliResult {
    let rule = require_rule(args)?;
    let reader = open_dump(dump)?;
    let mut report = Report::create(
        out,
        "truncate",
        &[("rule", rule.to_string())],
        &["record", "context_id", "allowed_size", "kept_mass", "post_entropy"],
    )?;
    for (i, rec) in reader.enumerate() {
        let (ctx, d) = rec?;
        let (set, t) = rule.apply(&d)?;
        report.row([
            i.to_string(),
            ctx.to_string(),
            set.size().to_string(),
            set.kept_mass().to_string(),
            t.entropy().to_string(),
        ])?;
    }
    report.finish()?;
    Ok(())
}

fn train_cmd(corpus: &Path, order: usize, smooth: f64, model_out: &Path, out: Option<&Path>) -> CliResult {
    let text = fs::read_to_string(corpus)?;
    let (vocab, ids) = tokenize(&text);
    let model = NGramModel::train(vocab, &ids, order, smooth)?;
    save_model(model_out, &model)?;
    let mut report = Report::create(
        out,
        "ngram-train",
        &[],
        &["order", "uniform_weight", "tokens", "vocab_size", "contexts"],
    )?;
    report.row([
        order.to_string(),
        smooth.to_string(),
        ids.len().to_string(),
        model.vocab_size().to_string(),
        model.num_contexts().to_string(),
    ])?;
    report.finish()?;
    Ok(())
}

fn gen_cmd(model: &Path, prompt: &str, steps: usize, args: &RuleArgs, seed: u64, out: Option<&Path>) -> CliResult {
    let rule = resolve_rule(args)?;
    let model = load_model(model)?;
    let prompt_ids = model.vocab().encode(prompt)?;
    let mut rng = Rng::new(seed);
    let rec = generate(&model, &prompt_ids, steps, rule.as_ref(), &mut rng)?;
    let status = match rec.status {
        GenerationStatus::Completed => "completed",
        GenerationStatus::UnseenContext => "unseen_context",
    };
    let meta = [
        ("rule", rule_label(rule.as_ref())),
        ("seed", seed.to_string()),
        ("text", model.vocab().decode(&rec.generated_ids)),
        (
            "support_exit_index",
            rec.support_exit_index
                .map_or_else(|| "none".to_string(), |i| i.to_string()),
        ),
        ("status", status.to_string()),
    ];
    let mut report = Report::create(out, "ngram-gen", &meta, &["step", "token", "entropy", "context_seen"])?;
    for (step, ((&id, &h), &seen)) in rec
        .generated_ids
        .iter()
        .zip(&rec.per_step_entropy)
        .zip(&rec.per_step_seen)
        .enumerate()
    {
        let token = model.vocab().token(id).unwrap_or("<unk>");
        report.row([step.to_string(), token.to_string(), h.to_string(), seen.to_string()])?;
    }
    report.finish()?;
    Ok(())
}

fn parse_buckets(spec: &str) -> CliResult<Vec<f64>> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("default") {
        return Ok(default_bucket_edges());
    }
    let nums = |s: &str, sep: char| -> CliResult<Vec<f64>> {
        s.split(sep)
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad bucket value {t:?}").into())
            })
            .collect()
    };
    if spec.contains(':') {
        let v = nums(spec, ':')?;
        let [lo, hi, step] = v[..] else {
            return Err(format!("bucket range {spec:?} must be lo:hi:step").into());
        };
        if !(step > 0.0 && hi > lo) {
            return Err(format!("bucket range {spec:?} is empty").into());
        }
        let n = ((hi - lo) / step).round() as usize;
        return Ok((0..=n).map(|i| lo + i as f64 * step).collect());
    }
    nums(spec, ',')
}

fn profile_cmd(
    dump: Option<&Path>,
    model: Option<&Path>,
    args: &RuleArgs,
    buckets: &str,
    out: Option<&Path>,
) -> CliResult {
    let rule = require_rule(args)?;
    let edges = parse_buckets(buckets)?;
    let dists: Vec<Dist> = match (dump, model) {
        (Some(p), _) => load_dump(p)?.into_iter().map(|(_, d)| d).collect(),
        (None, Some(p)) => load_model(p)?.seen_dists().collect(),
        (None, None) => return Err("one of --dump or --model is required".into()),
    };
    let profile = entropy_profile_par(&dists, &rule, &edges)?;
    let mut report = Report::create(
        out,
        "entropy-profile",
        &[("rule", rule.to_string()), ("distributions", dists.len().to_string())],
        &["bucket_lo", "bucket_hi", "count", "mean_tv", "mean_retained_entropy"],
    )?;
    for b in &profile.buckets {
        report.row([
            b.bucket_lo.to_string(),
            b.bucket_hi.to_string(),
            b.count.to_string(),
            opt(b.mean_tv),
            opt(b.mean_retained_entropy),
        ])?;
    }
    let o = &profile.overflow;
    report.row([
        "overflow".to_string(),
        "overflow".to_string(),
        o.count.to_string(),
        opt(o.mean_tv),
        opt(o.mean_retained_entropy),
    ])?;
    report.finish()?;
    Ok(())
}

fn repetition_cmd(
    model: &Path,
    prompts: &Path,
    args: &RuleArgs,
    config: &RepetitionConfig,
    seed: u64,
    out: Option<&Path>,
) -> CliResult {
    let rule = resolve_rule(args)?;
    let model = load_model(model)?;
    let prompt_ids = fs::read_to_string(prompts)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| model.vocab().encode(l))
        .collect::<Result<Vec<_>, Error>>()?;
    let summary = repetition_experiment(&model, &prompt_ids, rule.as_ref(), config, seed)?;
    let meta = [
        ("rule", rule_label(rule.as_ref())),
        ("seed", seed.to_string()),
        ("threshold", config.threshold.to_string()),
        ("rate", summary.rate.to_string()),
    ];
    let mut report = Report::create(
        out,
        "repetition",
        &meta,
        &[
            "prompt",
            "completion",
            "length",
            "avg_nll",
            "is_repetition",
            "stopped_early",
        ],
    )?;
    for o in &summary.outcomes {
        report.row([
            o.prompt_index.to_string(),
            o.completion_index.to_string(),
            o.length.to_string(),
            o.avg_nll.to_string(),
            o.is_repetition.to_string(),
            o.stopped_early.to_string(),
        ])?;
    }
    report.finish()?;
    Ok(())
}

fn checklist_cmd(cases: &str, rules: &[String], print_threshold: f64, strict: bool, out: Option<&Path>) -> CliResult {
    let mut cases = if cases == "builtin" {
        builtin_cases()
    } else {
        load_cases(Path::new(cases))?
    };
    if !rules.is_empty() {
        let parsed = rules
            .iter()
            .map(|r| r.parse::<TruncationRule>())
            .collect::<Result<Vec<_>, Error>>()?;
        for case in &mut cases {
            case.rules = parsed.clone();
            case.expected.clear();
        }
    }
    let result = run_checklist(&cases, print_threshold)?;
    let mut report = Report::create(
        out,
        "checklist",
        &[],
        &[
            "case",
            "rule",
            "allowed_size",
            "kept_mass",
            "passed",
            "checks",
            "top_members",
        ],
    )?;
    for row in &result.rows {
        let checks: Vec<String> = row
            .checks
            .iter()
            .map(|c| format!("{}={}", c.description, if c.passed { "ok" } else { "FAIL" }))
            .collect();
        let members: Vec<String> = row.top_members.iter().map(|(t, p)| format!("{t}:{p}")).collect();
        report.row([
            row.case.clone(),
            row.rule.to_string(),
            row.allowed_size.to_string(),
            row.kept_mass.to_string(),
            row.passed().to_string(),
            checks.join(";"),
            members.join(";"),
        ])?;
    }
    report.finish()?;
    if strict && !result.all_passed() {
        return Err("checklist expectations failed".into());
    }
    Ok(())
}

fn verify_cmd(scenarios: usize, vocab: usize, seed: u64, out: Option<&Path>) -> CliResult {
    let results = verify_batch(scenarios, vocab, seed)?;
    let mut report = Report::create(
        out,
        "smoothing-verify",
        &[("seed", seed.to_string())],
        &[
            "scenario",
            "vocab_size",
            "support_size",
            "true_entropy",
            "lambda",
            "delta",
            "alpha",
            "lambda_bar",
            "eta_star",
            "allowed_size",
            "variation_loss",
            "support_loss",
            "support_loss_zero",
            "minimal",
        ],
    )?;
    for (i, (s, r)) in results.iter().enumerate() {
        report.row([
            i.to_string(),
            s.vocab_size().to_string(),
            r.support_size.to_string(),
            s.true_entropy().to_string(),
            s.lambda().to_string(),
            s.delta().to_string(),
            s.alpha().to_string(),
            s.lambda_bar().to_string(),
            r.eta_star.to_string(),
            r.allowed_size.to_string(),
            r.variation_loss.to_string(),
            r.support_loss.to_string(),
            r.support_loss_zero.to_string(),
            r.minimal.to_string(),
        ])?;
    }
    report.finish()?;
    Ok(())
}
