import json
from pathlib import Path

import pandas as pd
import streamlit as st

from config import DATA_DIR, RUNS_DIR
from pipeline.grid_runner import FAILURES_FILE, PARETO_FILE, RESULTS_FILE, pareto_frame
from pipeline.plotting import tradeoff_figure

# Page configuration
st.set_page_config(
    page_title="ConceptWeaver - Fraud Explainability Explorer",
    page_icon="🧠",
    layout="wide",
    initial_sidebar_state="expanded",
)

st.markdown("""
<style>
    .stApp {
        background: linear-gradient(135deg, #0f0c29, #302b63, #24243e);
        color: #e0e0e0;
    }
    .main-header {
        background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
        padding: 1.5rem;
        border-radius: 15px;
        text-align: center;
        margin-bottom: 1.5rem;
    }
    .main-header h1 { color: white; margin: 0; }
    .main-header p { color: rgba(255,255,255,0.9); margin-top: 0.5rem; }
    .metric-card {
        background: rgba(30, 30, 46, 0.8);
        border: 1px solid rgba(102, 126, 234, 0.3);
        border-radius: 12px;
        padding: 1rem;
        text-align: center;
    }
    .metric-value { font-size: 1.8rem; font-weight: bold; color: #667eea; margin: 0; }
    .metric-label { font-size: 0.9rem; color: #b4b4b4; margin: 0; }
</style>
""", unsafe_allow_html=True)

st.markdown("""
<div class="main-header">
    <h1>🧠 ConceptWeaver</h1>
    <p>Concept-based explanations for fraud models: accuracy vs. explainability</p>
</div>
""", unsafe_allow_html=True)


@st.cache_data
def load_results(grid_dir: str) -> pd.DataFrame:
    return pd.read_csv(Path(grid_dir) / RESULTS_FILE)


@st.cache_data
def load_provenance(data_dir: str) -> dict:
    path = Path(data_dir) / "provenance.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def metric_card(col, value, label: str) -> None:
    with col:
        st.markdown(f"""
        <div class="metric-card">
            <p class="metric-value">{value}</p>
            <p class="metric-label">{label}</p>
        </div>
        """, unsafe_allow_html=True)


# Sidebar
with st.sidebar:
    st.markdown("## ⚙️ Sources")
    grid_dir = st.text_input("Grid directory", value=str(RUNS_DIR / "grid"))
    data_dir = st.text_input("Dataset directory", value=str(DATA_DIR))
    st.markdown("---")
    with st.expander("💡 How to Use", expanded=True):
        st.markdown("""
        1. `python cli.py gen-data` to generate the synthetic benchmark
        2. `python cli.py grid` to train every strategy over the grid
        3. Browse the trade-off and the Pareto-optimal runs here
        """)

results_path = Path(grid_dir) / RESULTS_FILE
if not results_path.exists():
    st.warning(f"No {RESULTS_FILE} found in {grid_dir}. Run `python cli.py grid` first.")
    st.stop()

results = load_results(grid_dir)
pareto = pareto_frame(results)

tab1, tab2, tab3, tab4 = st.tabs(["📈 Trade-off", "🏆 Pareto", "🗂️ Dataset", "ℹ️ About"])

with tab1:
    cols = st.columns(4)
    metric_card(cols[0], len(results), "Runs")
    metric_card(cols[1], results["strategy"].nunique(), "Strategies")
    metric_card(cols[2], int(pareto["front_overall"].sum()), "Overall Pareto runs")
    failures_path = Path(grid_dir) / FAILURES_FILE
    n_failed = len(pd.read_csv(failures_path)) if failures_path.exists() else 0
    metric_card(cols[3], n_failed, "Failed cells")

    strategies = sorted(results["strategy"].astype(str).unique())
    chosen = st.multiselect("Strategies", strategies, default=strategies)
    view = results[results["strategy"].astype(str).isin(chosen)]
    if view.empty:
        st.info("📊 Select at least one strategy")
    else:
        fig = tradeoff_figure(view)
        fig.update_layout(plot_bgcolor="rgba(0,0,0,0)", paper_bgcolor="rgba(0,0,0,0)", font=dict(color="white"))
        st.plotly_chart(fig, use_container_width=True)

    st.markdown("### Mean per strategy")
    st.dataframe(
        results.groupby("strategy")[["recall_at_fpr", "map", "concept_jaccard"]].mean().round(4),
        use_container_width=True,
    )

with tab2:
    st.markdown("### 🏆 Pareto-optimal runs")
    scope = st.radio("Front", ["Within strategy", "Overall"], horizontal=True)
    column = "front_within_strategy" if scope == "Within strategy" else "front_overall"
    front_ids = set(pareto.loc[pareto[column], "run_id"])
    front = results[results["model_id"].astype(str).isin(front_ids)].sort_values(["strategy", "map"], ascending=[True, False])
    st.dataframe(front, use_container_width=True, height=400)
    st.download_button(
        "📥 Download pareto.csv",
        pareto.to_csv(index=False),
        file_name=PARETO_FILE,
        mime="text/csv",
    )

with tab3:
    st.markdown("### 🗂️ Dataset report")
    provenance = load_provenance(data_dir)
    if not provenance:
        st.info(f"No provenance.json in {data_dir}")
    else:
        stats = provenance.get("stats", {})
        calibration = provenance.get("calibration", {})
        cols = st.columns(4)
        metric_card(cols[0], f"{sum(stats.get('split_sizes', {}).values()):,}", "Records")
        metric_card(cols[1], stats.get("golden_size", 0), "Golden subset")
        mean_j = stats.get("mean_jaccard")
        metric_card(cols[2], f"{mean_j:.3f}" if mean_j is not None else "n/a", "Mean Jaccard (noisy vs golden)")
        auc = calibration.get("learnability_auc")
        metric_card(cols[3], f"{auc:.3f}" if auc is not None else "n/a", "Learnability AUC")

        rates = pd.DataFrame({
            "golden": stats.get("concept_rates_golden", {}),
            "noisy": stats.get("concept_rates_noisy", {}),
        })
        if not rates.empty:
            st.markdown("**Concept rates**")
            st.bar_chart(rates)
        with st.expander("🔍 Generator config"):
            st.json(provenance.get("config", {}))

with tab4:
    st.markdown("""
    ### ℹ️ About

    Every model is a concept bottleneck: a shared trunk predicts k concept
    probabilities, and the fraud decision is made from those concepts alone.

    **Strategies**
    - **fully-supervised**: golden concept labels only (small, trusted pool)
    - **pretrain / two-stage**: pre-train on noisy rule-derived concepts, then fine-tune on golden labels
    - **hybrid**: every batch mixes a fixed share of golden rows with noisy rows

    **Metrics**: fraud recall at a fixed false-positive rate (threshold chosen on
    validation) and macro mean average precision over concepts.
    """)
