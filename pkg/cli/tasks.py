import enum


class TaskKind(str, enum.Enum):
    TRAIN = 'train'
    SWEEP = 'sweep'
    FIT = 'fit'
    JCP = 'jcp'
    PHY_CHECK = 'phy-check'
    PIPELINE = 'pipeline'


TASK_NAMES = tuple(task.value for task in TaskKind)

# Output file of every task, relative to the output directory.
TRACE_CSV = 'train_trace.csv'
SUMMARY_JSON = 'train_summary.json'
CONSTELLATION_CSV = 'constellation.csv'
SWEEP_CSV = 'sweep.csv'
FIT_JSON = 'fit.json'
JCP_JSON = 'jcp.json'
PHY_JSON = 'phy_check.json'
