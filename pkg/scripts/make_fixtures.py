"""Regenerate the bundled fixtures under src/filebus/fixtures/. Run from the repository root."""
import json, random, os
from pathlib import Path
F = Path("src/filebus/fixtures")

def rule(role, respond, turn=None, dc=None, tc=None):
    m = {"role": role}
    if turn is not None: m["turn"] = turn
    if dc is not None: m["directive_contains"] = dc
    if tc is not None: m["transcript_contains"] = tc
    return {"match": m, "respond": respond}

def tool(t, **args):
    return {"tool": t, "args": args}

def fin(status, summary, artifacts=()):
    return {"finish": {"status": status, "summary": summary, "artifacts": list(artifacts)}}

def write_scn(name, meta, rules):
    d = F / name; d.mkdir(parents=True, exist_ok=True)
    with open(d / "scenario.jsonl", "w") as fh:
        fh.write(json.dumps({"scenario": meta}) + "\n")
        for r in rules:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")

def write_task(name):
    t = F / name / "task"; t.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    xs = [round(rng.random(), 4) for _ in range(50)]
    vals = xs + [round(1 - x, 4) for x in xs]
    rng.shuffle(vals)
    with open(t / "data.csv", "w") as fh:
        fh.write("value\n")
        for v in vals:
            fh.write(f"{v:.4f}\n")
    (t / "paper.md").write_text(
        "# A Toy Study of Sample Means\n\n"
        "## Method\nWe compute the arithmetic mean of the single `value` column in data.csv.\n\n"
        "## Data\ndata.csv holds 100 rows in [0, 1].\n\n"
        "## Results\nThe reported mean is 0.5000.\n"
    )

def write_config(name, goal, extra=""):
    (F / name / "config.toml").write_text(
        f'goal = "{goal}"\n'
        'workspace = "workspace"\n'
        'task_source = "task"\n'
        'environment_note = "CPU-only sandbox with python3 and /bin/sh; no network"\n'
        'backend = "scripted"\n'
        'scenario = "scenario.jsonl"\n'
        'fixed_clock = true\n'
        'seed = 0\n' + extra +
        '\n[budget]\nwall_clock_s = 3600\n'
    )

COMPUTE = (
    "import csv\nimport math\nimport sys\n\n"
    "with open(sys.argv[1], newline='') as fh:\n"
    "    values = [float(row['value']) for row in csv.DictReader(fh)]\n"
    "print(f'rows={len(values)}')\n"
    "print(f'metric={math.fsum(values) / len(values):.10f}')\n"
)
REPRO = "#!/bin/sh\nset -e\ncd \"$(dirname \"$0\")\"\npython3 compute_mean.py ../paper_analysis/paper/data.csv\n"
STRUCTURE = (
    "# Paper structure\n\n"
    "## Implementation details\n- Input: paper_analysis/paper/data.csv, column `value`, 100 rows.\n"
    "- Statistic: arithmetic mean over all rows.\n\n"
    "## Target metrics\n- mean = 0.5000\n\n"
    "## Uncertainty notes\n- Rounding of the reported value is unstated; compare to 4 decimals.\n"
)
GOAL = "Reproduce the toy paper: report the mean of the bundled dataset (target 0.5000)"

def comprehension_rules():
    return [
        rule("comprehension", tool("read", path="paper_analysis/paper/paper.md"), 0),
        rule("comprehension", tool("spawn", role="structure_extractor", directive="List the section headings of paper_analysis/paper/paper.md"), 1),
        rule("comprehension", tool("write", path="paper_analysis/structure.md", content=STRUCTURE), 2),
        rule("comprehension", fin("completed", "Wrote paper_analysis/structure.md: target metric mean=0.5000 over data.csv.", ["paper_analysis/structure.md"]), 3),
        rule("structure_extractor", tool("read", path="paper_analysis/paper/paper.md"), 0),
        rule("structure_extractor", fin("completed", "Sections: Method, Data, Results."), 1),
    ]

def implementation_rules():
    return [
        rule("implementation", tool("write", path="submission/compute_mean.py", content=COMPUTE), 0),
        rule("implementation", tool("write", path="submission/reproduce.sh", content=REPRO), 1),
        rule("implementation", tool("shell", cmd="sh submission/reproduce.sh", timeout_s=60), 2),
        rule("implementation", tool("append", path="agent/impl_log.md", content="Built compute_mean.py (math.fsum mean) and reproduce.sh entry point."), 3),
        rule("implementation", fin("completed", "submission/reproduce.sh prints metric=<mean>.", ["submission/reproduce.sh", "submission/compute_mean.py"]), 4),
    ]

BOOT = ("python3 -c \"import csv, random; "
        "v=[float(r['value']) for r in csv.DictReader(open('paper_analysis/paper/data.csv'))]; "
        "g=random.Random(0); f=open('agent/experiments/run1/bootstrap.csv','w'); f.write('draw,mean\\n'); "
        "[f.write(f'{i},{sum(g.choice(v) for _ in v)/len(v):.10f}\\n') for i in range(2000)]\" && tail -n 1 agent/experiments/run1/bootstrap.csv")

def experimentation_rules(extra_shell=None):
    rs = [
        rule("experimentation", tool("shell", cmd="mkdir -p agent/experiments/run1 && sh submission/reproduce.sh > agent/experiments/run1/stdout.txt && cat agent/experiments/run1/stdout.txt", timeout_s=60), 0),
        rule("experimentation", tool("append", path="agent/exp_log.md", content="run1: metric=0.5000000000 target=0.5000 status=match"), 1, tc="metric=0.5000000000"),
        rule("experimentation", tool("append", path="agent/exp_log.md", content="run1: metric missing from output; unresolved"), 1),
    ]
    rs.append(rule("experimentation", tool("shell", cmd=BOOT, timeout_s=60), 2))
    turn = 3
    if extra_shell:
        rs.append(rule("experimentation", tool("shell", cmd=extra_shell, timeout_s=60), turn)); turn += 1
    rs += [
        rule("experimentation", fin("completed", "run1 metric=0.5000000000 matches target 0.5000; logged in agent/exp_log.md.", ["agent/exp_log.md", "agent/experiments/run1/stdout.txt", "agent/experiments/run1/bootstrap.csv"]), turn, tc="metric=0.5000000000"),
        rule("experimentation", fin("failed", "run1 did not produce the metric; see agent/exp_log.md.", ["agent/exp_log.md"]), turn),
    ]
    return rs

def orchestrator_rules():
    return [
        rule("orchestrator", tool("comprehension", directive="Analyse paper_analysis/paper/paper.md: implementation details, target metric, uncertainties.", stage="comprehend"), 0),
        rule("orchestrator", tool("implementation", directive="Build submission/ so that reproduce.sh computes the paper's metric.", stage="implement"), 1),
        rule("orchestrator", tool("experimentation", directive="Run submission/reproduce.sh, compare with the target, log the result.", stage="experiment"), 2),
        rule("orchestrator", fin("completed", "Metric reproduced and logged."), 3, tc="summary experimentation completed"),
        rule("orchestrator", fin("failed", "Experimentation did not confirm the metric."), 3),
    ]

# toy
write_task("toy")
write_scn("toy", {"name": "toy", "steps_needed": 4, "description": "comprehend -> implement -> experiment on the toy mean task"},
          orchestrator_rules() + comprehension_rules() + implementation_rules() + experimentation_rules())
write_config("toy", GOAL)

# large artifacts
write_task("large")
gen = ("python3 -c \"import random; r=random.Random(7); "
       "[open(f'agent/experiments/run1/sweep_{i}.csv','w').write(''.join(f'{j},{r.random():.12f}\\n' for j in range(2500))) for i in range(4)]\"")
write_scn("large", {"name": "large", "steps_needed": 4, "description": "toy task plus bulky experiment outputs (>100 KiB)"},
          orchestrator_rules() + comprehension_rules() + implementation_rules() + experimentation_rules(extra_shell=gen))
write_config("large", GOAL)

# continuity: stage 3 reads stage 2's exp_log
write_task("continuity")
cont = [
    # flat orchestration: the orchestrator does the work with native tools
    rule("orchestrator", tool("write", path="submission/compute_mean.py", content=COMPUTE), 0, tc="orchestration=flat"),
    rule("orchestrator", tool("write", path="submission/reproduce.sh", content=REPRO), 1, tc="orchestration=flat"),
    rule("orchestrator", tool("shell", cmd="sh submission/reproduce.sh", timeout_s=60), 2, tc="orchestration=flat"),
    rule("orchestrator", tool("append", path="agent/exp_log.md", content="flat run: metric=0.5000000000"), 3, tc="orchestration=flat"),
    rule("orchestrator", tool("read", path="agent/exp_log.md"), 4, tc="orchestration=flat"),
    rule("orchestrator", fin("completed", "Flat run finished."), 5, tc="orchestration=flat"),
    # hierarchical
    rule("orchestrator", tool("implementation", directive="Build submission/ so that reproduce.sh computes the paper's metric.", stage="implement"), 0),
    rule("orchestrator", tool("experimentation", directive="Run submission/reproduce.sh, compare with the target, log the result.", stage="experiment"), 1),
    rule("orchestrator", tool("implementation", directive="Patch the build using the findings recorded in agent/exp_log.md.", stage="fix", mode="fix"), 2),
    rule("orchestrator", fin("failed", "Stage 3 could not read the experiment log (NotFound)."), 3, tc="NotFound"),
    rule("orchestrator", fin("completed", "Fix applied using the experiment log."), 3),
    # stage 3: implementation in fix mode reads stage 2's log
    rule("implementation", tool("read", path="agent/exp_log.md"), 0, dc='"mode": "fix"'),
    rule("implementation", fin("failed", "NotFound: agent/exp_log.md is missing; nothing to act on."), 1, dc='"mode": "fix"', tc="NotFound"),
    rule("implementation", tool("append", path="agent/impl_log.md", content="Fix pass: reviewed exp_log; metric already matches, no code change."), 1, dc='"mode": "fix"'),
    rule("implementation", fin("completed", "Reviewed agent/exp_log.md; no patch required.", ["agent/impl_log.md"]), 2, dc='"mode": "fix"'),
] + implementation_rules() + experimentation_rules()
write_scn("continuity", {"name": "continuity", "description": "stage 3 depends on stage 2's agent/exp_log.md"}, cont)
write_config("continuity", GOAL)

# pathological long tool
write_scn("slow_tool", {"name": "slow_tool", "description": "orchestrator keeps running shell commands that hit their timeout"}, [
    rule("orchestrator", tool("shell", cmd="sleep 30", timeout_s=2)),
])
(F / "slow_tool" / "config.toml").write_text(
    'goal = "Exercise the budget with a tool that always times out"\nworkspace = "workspace"\nbackend = "scripted"\n'
    'scenario = "scenario.jsonl"\n\n[budget]\nwall_clock_s = 1\n')

# always-failing specialist
write_task("failing")
write_scn("failing", {"name": "failing", "description": "implementation keeps failing; orchestrator switches to fix mode"}, [
    rule("orchestrator", tool("implementation", directive="Build submission/ so that reproduce.sh computes the paper's metric.", stage="implement"), 0),
    rule("orchestrator", tool("implementation", directive="Patch the failing build; see the failure summary.", stage="fix", mode="fix"), 1, tc="summary implementation failed"),
    rule("orchestrator", fin("failed", "Implementation keeps failing after a fix attempt."), 2, tc="summary implementation failed"),
    rule("orchestrator", fin("completed", "done"), 2),
    rule("implementation", tool("write", path="submission/main.py", content="raise SystemExit(1)\n"), 0, dc='"mode": "full"'),
    rule("implementation", fin("failed", "Build error: main.py exits with status 1."), 1),
    rule("implementation", fin("failed", "Fix attempt failed: main.py still exits with status 1."), 0, dc='"mode": "fix"'),
])
write_config("failing", GOAL)

# adversarial depth: a tier-2 worker tries to spawn
write_task("deep_spawn")
write_scn("deep_spawn", {"name": "deep_spawn", "description": "tier-2 script attempts to spawn a deeper worker"}, [
    rule("orchestrator", tool("comprehension", directive="Analyse the paper with help from subagents.", stage="comprehend"), 0),
    rule("orchestrator", tool("comprehension", directive="Try again, delegating deeper.", stage="comprehend"), 1),
    rule("orchestrator", fin("completed", "done"), 2),
    rule("comprehension", tool("spawn", tasks=[
        {"role": "structure_extractor", "directive": "extract headings"},
        {"role": "algorithm_analyst", "directive": "analyse the algorithm"}]), 0),
    rule("comprehension", tool("spawn", role="explorer", directive="explore"), 1),
    rule("comprehension", fin("completed", "Subagent results merged."), 2),
    rule("structure_extractor", tool("spawn", role="explorer", directive="go deeper"), 0),
    rule("structure_extractor", tool("spawn", role="structure_extractor", directive="go deeper again"), 1),
    rule("structure_extractor", fin("completed", "Could not delegate; did it myself."), 2),
    rule("algorithm_analyst", tool("spawn", role="explorer", directive="go deeper"), 0),
    rule("algorithm_analyst", fin("completed", "Analysed without delegation."), 1),
])
write_config("deep_spawn", GOAL)
