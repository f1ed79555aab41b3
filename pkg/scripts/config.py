"""設定"""

# 出力ディレクトリ名
DATA_DIR = "data"

# 移動平均のウィンドウ幅
MOVING_AVERAGE_WINDOW = 100

# 1エピソードあたりの最大ステップ数（Wengの MDP は状態0に戻り得るため上限を設ける）
MAX_STEPS_PER_EPISODE = 100_000

# 価値反復の許容誤差と最大反復回数
VALUE_ITERATION_TOL = 1e-10
VALUE_ITERATION_MAX_ITER = 1_000_000

# γ=1 の価値反復で、残差がこの割合以上減らない反復がこの回数続いたら発散とみなす
VALUE_ITERATION_STALL_ITER = 10_000
VALUE_ITERATION_STALL_RATIO = 1e-3

# 既定の乱数シード
DEFAULT_SEED = 20240101

# 並列実行のワーカー数を指定する環境変数
WORKERS_ENV = "DAQ_LAB_WORKERS"

# 乱数ストリームが一度に生成する一様乱数の個数
RNG_BLOCK_SIZE = 4096
